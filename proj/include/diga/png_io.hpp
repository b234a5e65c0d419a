#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "diga/core.hpp"

namespace diga::png {

namespace detail {

// Write to a sibling temp file, then rename, so readers never see a torn file.
inline void write_raw(const std::filesystem::path& path, int width, int height,
                      int format, const std::vector<std::uint8_t>& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = static_cast<png_uint_32>(format);
  auto tmp = path;
  tmp += ".tmp";
  if (!png_image_write_to_file(&img, tmp.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("failed to write PNG '" + path.string() + "': " + img.message);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("failed to rename '" + tmp.string() + "': " + ec.message());
}

inline std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, int format,
                                          int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = static_cast<png_uint_32>(format);
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return bytes;
}

}  // namespace detail

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// 8-bit RGB, values quantized to multiples of 1/255.
inline void write_image(const std::filesystem::path& path, const Image& image) {
  const std::size_t n = image.plane();
  std::vector<std::uint8_t> bytes(n * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) bytes[i * 3 + c] = quantize(image.data[c * n + i]);
  detail::write_raw(path, image.width, image.height, PNG_FORMAT_RGB, bytes);
}

inline Image read_image(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = detail::read_raw(path, PNG_FORMAT_RGB, w, h);
  Image image(3, h, w);
  const std::size_t n = image.plane();
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      image.data[c * n + i] = static_cast<float>(bytes[i * 3 + c]) / 255.0f;
  return image;
}

/// 8-bit single channel; ids must fit in [0, 255].
inline void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<std::uint8_t> bytes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = labels.data[i];
    if (v < 0 || v > 255)
      throw IoError("label id " + std::to_string(v) + " does not fit 8 bits in '" +
                    path.string() + "'");
    bytes[i] = static_cast<std::uint8_t>(v);
  }
  detail::write_raw(path, labels.width, labels.height, PNG_FORMAT_GRAY, bytes);
}

inline LabelMap read_labels(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = detail::read_raw(path, PNG_FORMAT_GRAY, w, h);
  LabelMap labels(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) labels.data[i] = bytes[i];
  return labels;
}

}  // namespace diga::png
