#pragma once

// Grayscale image I/O, random patch sampling and per-patch standardization.

#include <png.h>

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "iqe/error.hpp"
#include "iqe/rng.hpp"

namespace iqe {

/// Row-major luminance image with values in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  bool empty() const { return width == 0 || height == 0; }
};

/// l standardized (or raw, before standardize()) patch vectors stored as the
/// columns of a d x l matrix. A patch of side s is laid out row-major, d = s*s.
struct DescriptorSet {
  Eigen::MatrixXd columns;

  std::size_t dim() const { return static_cast<std::size_t>(columns.rows()); }
  std::size_t count() const { return static_cast<std::size_t>(columns.cols()); }
};

/// ITU-R BT.601 luma of an 8-bit RGB triple, scaled to [0, 1].
inline double bt601_luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
}

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    const char a = static_cast<char>(std::tolower(static_cast<unsigned char>(s[s.size() - suffix.size() + i])));
    if (a != suffix[i]) return false;
  }
  return true;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Netpbm header token reader; skips whitespace and '#' comments.
inline std::size_t pnm_token(const std::vector<std::uint8_t>& buf, std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= buf.size() || !std::isdigit(buf[pos])) throw IoError("malformed PNM header in '" + path + "'");
  std::size_t v = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    if (v > (1u << 30)) throw IoError("PNM dimension too large in '" + path + "'");
    ++pos;
  }
  return v;
}

inline GrayImage decode_pnm(const std::vector<std::uint8_t>& buf, const std::string& path) {
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
    throw IoError("unsupported PNM variant in '" + path + "' (expected binary P5 or P6)");
  }
  const bool rgb = buf[1] == '6';
  std::size_t pos = 2;
  const std::size_t w = pnm_token(buf, pos, path);
  const std::size_t h = pnm_token(buf, pos, path);
  const std::size_t maxval = pnm_token(buf, pos, path);
  if (w == 0 || h == 0) throw IoError("zero-dimension image '" + path + "'");
  if (maxval != 255) throw IoError("unsupported PNM maxval " + std::to_string(maxval) + " in '" + path + "'");
  ++pos;  // single whitespace byte after maxval
  const std::size_t channels = rgb ? 3 : 1;
  if (buf.size() < pos + w * h * channels) throw IoError("truncated PNM data in '" + path + "'");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::uint8_t* px = buf.data() + pos + i * channels;
    img.data[i] = rgb ? bt601_luma(px[0], px[1], px[2]) : px[0] / 255.0;
  }
  return img;
}

struct PngImageGuard {
  png_image* image;
  ~PngImageGuard() { png_image_free(image); }
};

inline GrayImage decode_png(const std::vector<std::uint8_t>& buf, const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  PngImageGuard guard{&image};
  if (!png_image_begin_read_from_memory(&image, buf.data(), buf.size())) {
    throw IoError("cannot decode PNG '" + path + "': " + image.message);
  }
  if (image.width == 0 || image.height == 0) throw IoError("zero-dimension image '" + path + "'");
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  // Alpha is read and discarded; 8-bit sRGB formats are not premultiplied.
  image.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  const std::size_t channels = PNG_IMAGE_PIXEL_CHANNELS(image.format);
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    throw IoError("cannot decode PNG '" + path + "': " + image.message);
  }
  GrayImage img(image.width, image.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const std::uint8_t* px = pixels.data() + i * channels;
    img.data[i] = color ? bt601_luma(px[0], px[1], px[2]) : px[0] / 255.0;
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace detail

/// Loads a binary PGM/PPM or PNG file as a [0,1] grayscale image. The format
/// is detected from the file signature, not the extension.
inline GrayImage load_grayscale(const std::string& path) {
  const auto buf = detail::read_file(path);
  if (buf.size() >= 8 && png_sig_cmp(buf.data(), 0, 8) == 0) return detail::decode_png(buf, path);
  if (buf.size() >= 2 && buf[0] == 'P') return detail::decode_pnm(buf, path);
  throw IoError("unsupported image format '" + path + "'");
}

/// Writes an 8-bit binary PGM (P5). Values are clamped to [0,1] and rounded.
inline void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(detail::to_byte(img.data[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Writes an 8-bit grayscale PNG.
inline void write_png(const GrayImage& img, const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail::to_byte(img.data[i]);
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG '" + path + "': " + msg);
  }
}

/// Copies the size x size patch with top-left corner (x, y) into `out`
/// (row-major).
template <typename Out>
void copy_patch(const GrayImage& img, std::size_t x, std::size_t y, std::size_t size, Out&& out) {
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) out(static_cast<Eigen::Index>(r * size + c)) = img.at(x + c, y + r);
  }
}

/// Draws `count` patches with replacement; top-left corners are uniform over
/// all positions that keep the patch inside the image. Returns raw values.
inline DescriptorSet sample_patches(const GrayImage& img, std::size_t count, std::size_t size, Rng& rng) {
  if (size == 0 || count == 0) throw ConfigError("patch size and count must be positive");
  if (img.width < size || img.height < size) {
    throw DimensionError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " is smaller than patch size " + std::to_string(size));
  }
  const std::size_t nx = img.width - size + 1;
  const std::size_t ny = img.height - size + 1;
  DescriptorSet set;
  set.columns.resize(static_cast<Eigen::Index>(size * size), static_cast<Eigen::Index>(count));
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t x = uniform_index(rng, nx);
    const std::size_t y = uniform_index(rng, ny);
    copy_patch(img, x, y, size, set.columns.col(static_cast<Eigen::Index>(j)));
  }
  return set;
}

inline constexpr double kStandardizeEpsilon = 1e-8;

/// Standardizes one vector in place: (x - mean) / (population std + eps).
/// Constant vectors become exactly zero.
template <typename Vec>
void standardize_column(Vec&& col) {
  const Eigen::Index n = col.size();
  if (n == 0) return;
  bool constant = true;
  for (Eigen::Index i = 1; i < n && constant; ++i) constant = col(i) == col(0);
  if (constant) {
    col.setZero();
    return;
  }
  const double mean = col.sum() / static_cast<double>(n);
  col.array() -= mean;
  const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(n));
  col /= (sd + kStandardizeEpsilon);
  // Re-centre to remove the rounding residue of the first subtraction.
  col.array() -= col.sum() / static_cast<double>(n);
}

inline DescriptorSet standardize(DescriptorSet set) {
  if (set.dim() == 0) throw DimensionError("cannot standardize zero-dimensional descriptors");
  for (Eigen::Index j = 0; j < set.columns.cols(); ++j) standardize_column(set.columns.col(j));
  return set;
}

}  // namespace iqe
