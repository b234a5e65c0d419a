#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace diga;

namespace {

void expect_pass(const test::GradCheckResult& r) {
  EXPECT_TRUE(r.ok()) << r.passed << "/" << r.total << " within 1e-3, worst " << r.worst;
}

}  // namespace

TEST(GradCheck, SupervisedCrossEntropy) { expect_pass(test::GradCheckInstance().supervised_ce()); }

TEST(GradCheck, SymmetricDistillation) { expect_pass(test::GradCheckInstance().distillation()); }

TEST(GradCheck, TargetPseudoLabelCrossEntropy) { expect_pass(test::GradCheckInstance().target_ce()); }

TEST(GradCheck, FullWarmupObjective) { expect_pass(test::GradCheckInstance().warmup_objective()); }
