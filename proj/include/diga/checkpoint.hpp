#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "diga/centroids.hpp"
#include "diga/core.hpp"
#include "diga/model.hpp"

namespace diga {

// Layout (all integers and floats little-endian):
//   "DIGA1"
//   u32 num_classes, u32 feature_dim, u32 feature_stride, u32 layer_count
//   layer_count x (u32 in, u32 out, u32 kernel, u32 stride, u32 relu)
//   u64 param_count, f32 student[param_count], f32 teacher[param_count]
//   u8 has_bank; if set: u32 C, u32 D, f32 rho[C*D], presence bitmap (ceil(C/8) bytes, LSB first)
inline constexpr char kCheckpointMagic[5] = {'D', 'I', 'G', 'A', '1'};

struct Checkpoint {
  ModelPair<float> pair;
  std::optional<CentroidBank> bank;

  bool operator==(const Checkpoint&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> buf, std::string name)
      : buf_(std::move(buf)), name_(std::move(name)) {}

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool match(const char* p, std::size_t n) {
    need(n);
    const bool ok = std::memcmp(buf_.data() + pos_, p, n) == 0;
    pos_ += n;
    return ok;
  }
  [[nodiscard]] bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("truncated checkpoint '" + name_ + "'");
  }
  std::vector<std::uint8_t> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  const auto& a = ck.pair.arch;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(a.num_classes));
  w.u32(static_cast<std::uint32_t>(a.feature_dim));
  w.u32(static_cast<std::uint32_t>(a.feature_stride));
  w.u32(static_cast<std::uint32_t>(a.layers.size()));
  for (const auto& l : a.layers) {
    w.u32(static_cast<std::uint32_t>(l.in));
    w.u32(static_cast<std::uint32_t>(l.out));
    w.u32(static_cast<std::uint32_t>(l.kernel));
    w.u32(static_cast<std::uint32_t>(l.stride));
    w.u32(l.relu ? 1u : 0u);
  }
  w.u64(ck.pair.student.size());
  for (float v : ck.pair.student) w.f32(v);
  for (float v : ck.pair.teacher) w.f32(v);
  w.u8(ck.bank ? 1 : 0);
  if (ck.bank) {
    const auto& b = *ck.bank;
    w.u32(static_cast<std::uint32_t>(b.num_classes));
    w.u32(static_cast<std::uint32_t>(b.feature_dim));
    for (double v : b.rho) w.f32(static_cast<float>(v));
    for (int byte = 0; byte < (b.num_classes + 7) / 8; ++byte) {
      std::uint8_t bits = 0;
      for (int j = 0; j < 8; ++j) {
        const int k = byte * 8 + j;
        if (k < b.num_classes && b.present[static_cast<std::size_t>(k)]) bits |= static_cast<std::uint8_t>(1u << j);
      }
      w.u8(bits);
    }
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& name) {
  detail::ByteReader r(std::move(bytes), name);
  if (!r.match(kCheckpointMagic, sizeof kCheckpointMagic))
    throw IoError("'" + name + "' is not a checkpoint (bad magic)");
  const int C = static_cast<int>(r.u32()), D = static_cast<int>(r.u32()),
            S = static_cast<int>(r.u32());
  const auto arch = Architecture::make(C, D, S);
  const auto layers = r.u32();
  if (layers != arch.layers.size()) throw IoError("checkpoint '" + name + "': layer count mismatch");
  for (const auto& l : arch.layers) {
    const bool ok = r.u32() == static_cast<std::uint32_t>(l.in) &&
                    r.u32() == static_cast<std::uint32_t>(l.out) &&
                    r.u32() == static_cast<std::uint32_t>(l.kernel) &&
                    r.u32() == static_cast<std::uint32_t>(l.stride) &&
                    r.u32() == (l.relu ? 1u : 0u);
    if (!ok) throw IoError("checkpoint '" + name + "': layer descriptor mismatch");
  }
  const auto count = r.u64();
  if (count != arch.param_count()) throw IoError("checkpoint '" + name + "': parameter count mismatch");
  Checkpoint ck;
  ck.pair.arch = arch;
  ck.pair.student.resize(count);
  ck.pair.teacher.resize(count);
  for (auto& v : ck.pair.student) v = r.f32();
  for (auto& v : ck.pair.teacher) v = r.f32();
  if (r.u8()) {
    const int bc = static_cast<int>(r.u32());
    const int bd = static_cast<int>(r.u32());
    CentroidBank b(bc, bd);
    for (auto& v : b.rho) v = r.f32();
    for (int byte = 0; byte < (b.num_classes + 7) / 8; ++byte) {
      const auto bits = r.u8();
      for (int j = 0; j < 8; ++j) {
        const int k = byte * 8 + j;
        if (k < b.num_classes) b.present[static_cast<std::size_t>(k)] = (bits >> j) & 1u;
      }
    }
    ck.bank = std::move(b);
  }
  if (!r.done()) throw IoError("checkpoint '" + name + "': trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize checkpoint '" + path.string() + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes), path.string());
}

}  // namespace diga
