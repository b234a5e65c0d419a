#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "diga/cli.hpp"
#include "test_util.hpp"

using namespace diga;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "diga");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Overrides that shrink every run to a few seconds.
std::vector<std::string> tiny_flags() {
  return {"--image_height", "16", "--image_width", "16", "--feature_dim", "4",
          "--num_source", "6", "--num_target_train", "6", "--num_target_val", "3",
          "--num_target2_val", "3", "--warmup_epochs", "1", "--st_epochs", "1",
          "--label_refresh_epochs", "1", "--batch_source", "2", "--batch_target", "2",
          "--learning_rate", "0.01"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

/// A generated tiny dataset shared by the tests of this file.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    const auto d = test::temp_dir("cli_data");
    const auto r = run_cli(with({"gen-data", "--out", (d / "data").string()}, tiny_flags()));
    EXPECT_EQ(r.code, 0) << r.err;
    return d / "data";
  }();
  return dir;
}

}  // namespace

TEST(Cli, GenDataIsByteIdentical) {
  const auto dir = test::temp_dir("cli_gen");
  for (const char* name : {"a", "b"}) {
    const auto r = run_cli(with({"gen-data", "--out", (dir / name).string(), "--previews", "2"}, tiny_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto a = tree(dir / "a"), b = tree(dir / "b");
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.count("index.txt"));
  EXPECT_TRUE(fs::exists(dir / "a" / "previews"));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli({}).code, cli::usage);
  EXPECT_EQ(run_cli({"--help"}).code, cli::ok);
  EXPECT_EQ(run_cli({"bogus"}).code, cli::usage);
  EXPECT_EQ(run_cli({"train-warmup", "--data", "x", "--not_a_key", "1"}).code, cli::usage);
  EXPECT_EQ(run_cli({"train-warmup"}).code, cli::usage);  // --data is required
  const auto tmp = test::temp_dir("cli_codes");
  EXPECT_EQ(run_cli({"train-warmup", "--data", (tmp / "missing").string(), "--run", (tmp / "r").string()}).code,
            cli::io);
  EXPECT_EQ(run_cli({"gen-data", "--out", (tmp / "d").string(), "--alpha", "-1"}).code, cli::validation);
  EXPECT_EQ(run_cli({"gen-data", "--out", (tmp / "d").string(), "--alpha", "abc"}).code, cli::usage);
  EXPECT_EQ(run_cli({"gen-data", "--out", (tmp / "d").string(), "--config", (tmp / "none.cfg").string()}).code,
            cli::io);
  EXPECT_EQ(run_cli({"eval", "--data", "x", "--checkpoint", "c", "--split", "nope"}).code, cli::usage);
}

TEST(Cli, BinaryReportsUsageErrors) {
  const std::string cmd = std::string("\"") + DIGA_CLI_PATH + "\" > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::usage);
}

TEST(Cli, PipelineProducesRunDirectories) {
  const auto& data = tiny_data();
  const auto runs = test::temp_dir("cli_pipeline");
  auto r = run_cli(with({"train-warmup", "--data", data.string(), "--run", (runs / "w").string()}, tiny_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.resolved", "metrics.jsonl", "report.json", "checkpoints/warmup.ckpt"})
    EXPECT_TRUE(fs::exists(runs / "w" / f)) << f;
  EXPECT_EQ(load_config((runs / "w" / "config.resolved").string()).image_height, 16);

  const auto warm = (runs / "w" / "checkpoints" / "warmup.ckpt").string();
  // Self-training needs a centroid bank.
  r = run_cli(with({"train-st", "--data", data.string(), "--checkpoint", warm, "--run", (runs / "bad").string()}, tiny_flags()));
  EXPECT_EQ(r.code, cli::validation);

  r = run_cli(with({"init-centroids", "--data", data.string(), "--checkpoint", warm, "--run", (runs / "c").string()},
                   tiny_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cent = (runs / "c" / "checkpoints" / "centroids.ckpt").string();
  ASSERT_TRUE(load_checkpoint(cent).bank.has_value());

  r = run_cli(with({"train-st", "--data", data.string(), "--checkpoint", cent, "--run", (runs / "s").string()}, tiny_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto st = (runs / "s" / "checkpoints" / "st.ckpt").string();
  EXPECT_TRUE(load_checkpoint(st).bank.has_value());

  for (bool mst : {false, true}) {
    const auto name = std::string(mst ? "e_mst" : "e");
    auto args = with({"eval", "--data", data.string(), "--checkpoint", st, "--run", (runs / name).string()}, tiny_flags());
    if (mst) args.push_back("--mst");
    r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = Json::parse(slurp(runs / name / "report.json"));
    EXPECT_EQ(report["mst"].get<bool>(), mst);
    EXPECT_EQ(report["split"], "target_val");
    const auto cfg = load_config("", {{"image_height", "16"}, {"image_width", "16"}, {"feature_dim", "4"}});
    const auto index = load_dataset(data);
    const auto ck = load_checkpoint(st);
    const auto expected = evaluate_miou<float>(ck.pair.arch, ck.pair.student, index.load_images("target_val"),
                                               index.load_labels("target_val", LabelAccess::evaluation, cfg), cfg, mst);
    EXPECT_EQ(report["miou"].get<double>(), expected.mean);
  }

  r = run_cli(with({"compare-pseudo", "--data", data.string(), "--checkpoint", cent, "--run", (runs / "cmp").string(),
                    "--thresholds", "0.5", "0.5", "0.5"},
                   tiny_flags()));
  EXPECT_EQ(r.code, cli::usage);
}

TEST(Cli, ComparePseudoReportsFourStrategies) {
  const auto& data = tiny_data();
  const auto runs = test::temp_dir("cli_compare");
  ASSERT_EQ(run_cli(with({"train-warmup", "--data", data.string(), "--run", (runs / "w").string()}, tiny_flags())).code, 0);
  ASSERT_EQ(run_cli(with({"init-centroids", "--data", data.string(), "--checkpoint",
                          (runs / "w" / "checkpoints" / "warmup.ckpt").string(), "--run", (runs / "c").string()},
                         tiny_flags()))
                .code,
            0);
  const auto r = run_cli(with({"compare-pseudo", "--data", data.string(), "--checkpoint",
                               (runs / "c" / "checkpoints" / "centroids.ckpt").string(), "--run", (runs / "cmp").string()},
                              tiny_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = Json::parse(slurp(runs / "cmp" / "report.json"));
  std::vector<std::string> names;
  for (const auto& s : report["strategies"]) names.push_back(s["strategy"]);
  EXPECT_EQ(names.size(), 4u);
  EXPECT_NE(std::find(names.begin(), names.end(), "consensus"), names.end());
}

TEST(Cli, AblateReportsRowsInOrderAndIsDeterministic) {
  const auto& data = tiny_data();
  const auto runs = test::temp_dir("cli_ablate");
  for (const char* name : {"a", "b"}) {
    const auto r = run_cli(with({"ablate", "--data", data.string(), "--run", (runs / name).string(), "--seeds", "1"},
                                tiny_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto report = Json::parse(slurp(runs / "a" / "report.json"));
  std::vector<std::string> names;
  for (const auto& row : report["ladder"]) names.push_back(row["name"]);
  const std::vector<std::string> expected{"source_only", "+distil_clean_to_aug", "+distil_aug_to_clean", "+crdomix",
                                          "+self_training"};
  EXPECT_EQ(names, expected);
  EXPECT_EQ(slurp(runs / "a" / "metrics.jsonl"), slurp(runs / "b" / "metrics.jsonl"));
  EXPECT_FALSE(slurp(runs / "a" / "metrics.jsonl").empty());
}

TEST(Cli, GeneralizeWritesBothDomains) {
  const auto& data = tiny_data();
  const auto runs = test::temp_dir("cli_generalize");
  const auto r = run_cli(with({"generalize", "--data", data.string(), "--run", (runs / "g").string(), "--seeds", "2"},
                              tiny_flags()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = Json::parse(slurp(runs / "g" / "report.json"));
  EXPECT_EQ(report["per_seed"].size(), 2u);
  for (const char* k : {"supervised", "distil"})
    for (const char* d : {"target", "target2"}) EXPECT_TRUE(report[k][d].is_number()) << k << d;
}
