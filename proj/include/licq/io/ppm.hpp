#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "licq/core/error.hpp"
#include "licq/core/tensor.hpp"

namespace licq {

namespace detail {

struct PpmCursor {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;
  const std::string& name;

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(name + ": " + what + " at byte " + std::to_string(pos));
  }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("malformed PPM header, expected a number");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (v > 1'000'000) fail("malformed PPM header, number too large");
    }
    return v;
  }
};

}  // namespace detail

/// Binary PPM (P6, maxval 255) from memory into [3, H, W] scaled to [0, 1].
/// `name` labels error messages.
template <typename T>
Tensor<T> decode_ppm(const std::vector<unsigned char>& bytes, const std::string& name = "<memory>") {
  detail::PpmCursor c{bytes, 0, name};
  if (bytes.size() < 2 || bytes[0] != 'P') c.fail("not a PPM file");
  if (bytes[1] != '6') c.fail("P6 required");
  c.pos = 2;
  const std::size_t width = c.number();
  const std::size_t height = c.number();
  const std::size_t maxval = c.number();
  if (width == 0 || height == 0) c.fail("empty image");
  if (maxval != 255) c.fail("maxval " + std::to_string(maxval) + " unsupported; 255 required");
  if (c.pos >= bytes.size() || !std::isspace(bytes[c.pos])) c.fail("malformed PPM header");
  ++c.pos;
  const std::size_t need = 3 * width * height;
  if (bytes.size() - c.pos < need) {
    c.pos = bytes.size();
    c.fail("truncated pixel data (" + std::to_string(need) + " bytes expected)");
  }
  std::vector<T> data(need);
  const std::size_t plane = width * height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) data[ch * plane + i] = static_cast<T>(bytes[c.pos + 3 * i + ch] / 255.0);
  }
  return Tensor<T>({3, height, width}, std::move(data));
}

template <typename T>
Tensor<T> read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm<T>(bytes, path.string());
}

/// [3, H, W] in [0, 1] to P6; values are clamped and rounded.
template <typename T>
std::vector<unsigned char> encode_ppm(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ModelError("encode_ppm: expected [3,H,W], got " + shape_str(img.shape()));
  const std::size_t H = img.dim(1), W = img.dim(2), plane = H * W;
  const std::string header = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  const auto v = img.values();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double x = std::clamp(static_cast<double>(v[ch * plane + i]), 0.0, 1.0);
      out.push_back(static_cast<unsigned char>(std::lround(x * 255.0)));
    }
  }
  return out;
}

template <typename T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& img) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Every *.ppm file of a directory, in filename order.
template <typename T>
std::vector<Tensor<T>> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor<T>> images;
  for (const auto& f : files) images.push_back(read_ppm<T>(f));
  return images;
}

}  // namespace licq
