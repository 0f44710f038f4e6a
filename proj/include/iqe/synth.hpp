#pragma once

// Procedural stand-in for a subjectively rated IQA database: textured
// reference images, four distortion families at graded severities, and a
// MOS that decays exponentially with severity.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "iqe/error.hpp"
#include "iqe/experiments.hpp"
#include "iqe/image.hpp"
#include "iqe/rng.hpp"

namespace iqe {

struct SynthOptions {
  std::size_t n_refs = 24;
  std::size_t levels = 4;
  std::uint64_t seed = 0;
  std::size_t image_size = 96;  // multiple of 8
};

struct DistortionSpec {
  const char* name;
  double mos_rate;  // MOS = 100 exp(-severity * rate)
};

inline constexpr std::array<DistortionSpec, 4> kSynthDistortions = {{
    {"gblur", 1.4},
    {"awgn", 1.1},
    {"jpeg", 0.9},
    {"contrast", 0.3},
}};

/// Severity of level index `level` out of `levels`: evenly spaced on [0, 1],
/// level 0 is the undistorted reference.
inline double synth_severity(std::size_t level, std::size_t levels) {
  return levels <= 1 ? 0.0 : static_cast<double>(level) / static_cast<double>(levels - 1);
}

inline double synth_mos(double severity, double rate) { return 100.0 * std::exp(-severity * rate); }

namespace synth {

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * static_cast<std::size_t>(radius) + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;
  const auto w = static_cast<long>(img.width), h = static_cast<long>(img.height);
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  GrayImage tmp(img.width, img.height), out(img.width, img.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(static_cast<std::size_t>(reflect(x + i, w)), static_cast<std::size_t>(y));
      tmp.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(static_cast<std::size_t>(x), static_cast<std::size_t>(reflect(y + i, h)));
      out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
    }
  return out;
}

inline double normal(Rng& rng) {
  // Box-Muller on the library's own uniform source for reproducibility.
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Reference content: a multi-octave texture with a roughly 1/f amplitude
/// spectrum (equal energy per octave), a gentle illumination gradient and a
/// few hard-edged shapes. Octave weights are fixed so references differ in
/// layout rather than in spectral statistics.
inline GrayImage reference_image(std::size_t size, Rng& rng) {
  constexpr std::array<double, 5> kOctaveSigma = {0.6, 1.2, 2.4, 4.8, 9.6};
  const double s = static_cast<double>(size);
  GrayImage texture(size, size, 0.0);
  GrayImage noise(size, size);
  for (double sigma : kOctaveSigma) {
    for (auto& v : noise.data) v = normal(rng);
    const GrayImage band = gaussian_blur(noise, sigma);
    double ss = 0.0;
    for (double v : band.data) ss += v * v;
    const double norm = std::sqrt(ss / static_cast<double>(band.data.size())) + 1e-12;
    for (std::size_t i = 0; i < texture.data.size(); ++i) texture.data[i] += band.data[i] / norm;
  }
  const double amplitude = (0.10 + 0.02 * uniform01(rng)) / std::sqrt(static_cast<double>(kOctaveSigma.size()));
  const double gx = 0.3 * (uniform01(rng) - 0.5), gy = 0.3 * (uniform01(rng) - 0.5);
  GrayImage img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      img.at(x, y) = 0.5 + gx * (static_cast<double>(x) / s - 0.5) + gy * (static_cast<double>(y) / s - 0.5) +
                     amplitude * texture.at(x, y);
    }
  const std::size_t shapes = 3 + uniform_index(rng, 6);
  for (std::size_t k = 0; k < shapes; ++k) {
    const bool disk = uniform_index(rng, 2) == 0;
    const double cx = uniform01(rng) * s, cy = uniform01(rng) * s;
    const double rx = (0.05 + 0.2 * uniform01(rng)) * s, ry = (0.05 + 0.2 * uniform01(rng)) * s;
    const double offset = 0.4 * (uniform01(rng) - 0.5);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx, dy = (static_cast<double>(y) - cy) / ry;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) img.at(x, y) += offset;
      }
  }
  for (auto& v : img.data) v = std::clamp(v, 0.02, 0.98);
  return img;
}

inline GrayImage add_noise(const GrayImage& img, double sigma, Rng& rng) {
  GrayImage out = img;
  if (sigma <= 0.0) return out;
  for (auto& v : out.data) v = std::clamp(v + sigma * normal(rng), 0.0, 1.0);
  return out;
}

inline GrayImage reduce_contrast(const GrayImage& img, double factor) {
  double mean = 0.0;
  for (double v : img.data) mean += v;
  mean /= static_cast<double>(img.data.size());
  GrayImage out = img;
  for (auto& v : out.data) v = mean + (v - mean) * factor;
  return out;
}

/// 8x8 block DCT with frequency-weighted uniform quantization.
inline GrayImage block_quantize(const GrayImage& img, double step) {
  if (step <= 0.0) return img;
  constexpr std::size_t B = 8;
  double c[B][B];
  for (std::size_t k = 0; k < B; ++k)
    for (std::size_t n = 0; n < B; ++n)
      c[k][n] = (k == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B)) *
                std::cos(std::numbers::pi * (2.0 * static_cast<double>(n) + 1.0) * static_cast<double>(k) / (2.0 * B));
  GrayImage out = img;
  for (std::size_t by = 0; by + B <= img.height; by += B)
    for (std::size_t bx = 0; bx + B <= img.width; bx += B) {
      double block[B][B], tmp[B][B], coef[B][B];
      for (std::size_t y = 0; y < B; ++y)
        for (std::size_t x = 0; x < B; ++x) block[y][x] = img.at(bx + x, by + y) - 0.5;
      for (std::size_t u = 0; u < B; ++u)
        for (std::size_t x = 0; x < B; ++x) {
          double acc = 0.0;
          for (std::size_t y = 0; y < B; ++y) acc += c[u][y] * block[y][x];
          tmp[u][x] = acc;
        }
      for (std::size_t u = 0; u < B; ++u)
        for (std::size_t v = 0; v < B; ++v) {
          double acc = 0.0;
          for (std::size_t x = 0; x < B; ++x) acc += tmp[u][x] * c[v][x];
          const double q = step * (1.0 + 0.5 * static_cast<double>(u + v));
          coef[u][v] = q * std::round(acc / q);
        }
      for (std::size_t y = 0; y < B; ++y)
        for (std::size_t v = 0; v < B; ++v) {
          double acc = 0.0;
          for (std::size_t u = 0; u < B; ++u) acc += c[u][y] * coef[u][v];
          tmp[y][v] = acc;
        }
      for (std::size_t y = 0; y < B; ++y)
        for (std::size_t x = 0; x < B; ++x) {
          double acc = 0.0;
          for (std::size_t v = 0; v < B; ++v) acc += tmp[y][v] * c[v][x];
          out.at(bx + x, by + y) = std::clamp(acc + 0.5, 0.0, 1.0);
        }
    }
  return out;
}

/// Applies distortion `type` at `severity` in [0, 1]; severity 0 is identity.
inline GrayImage distort(const GrayImage& ref, const std::string& type, double severity, Rng& rng) {
  if (severity <= 0.0) return ref;
  if (type == "gblur") return gaussian_blur(ref, 2.5 * severity);
  if (type == "awgn") return add_noise(ref, 0.12 * severity, rng);
  if (type == "jpeg") return block_quantize(ref, 0.25 * severity);
  if (type == "contrast") return reduce_contrast(ref, 1.0 - 0.95 * severity);
  throw ConfigError("unknown synthetic distortion '" + type + "'");
}

}  // namespace synth

/// Writes n_refs * 4 * levels 8-bit PGM images under out_dir/images and the
/// manifest out_dir/manifest.csv (image paths relative to out_dir). Returns
/// the manifest with resolved paths.
inline DatasetManifest synth_dataset(const std::string& out_dir, const SynthOptions& opts) {
  if (opts.n_refs < 1 || opts.levels < 1) throw ConfigError("synthetic dataset needs refs >= 1 and levels >= 1");
  if (opts.image_size < 16 || opts.image_size % 8 != 0) {
    throw ConfigError("synthetic image size must be a multiple of 8 and at least 16");
  }
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create '" + out_dir + "/images': " + ec.message());

  DatasetManifest relative;
  for (std::size_t r = 0; r < opts.n_refs; ++r) {
    char ref_id[32];
    std::snprintf(ref_id, sizeof(ref_id), "ref%03zu", r);
    Rng ref_rng = make_rng(derive_seed(opts.seed, r));
    GrayImage ref = synth::reference_image(opts.image_size, ref_rng);
    // Distortions see the 8-bit reference.
    for (auto& v : ref.data) v = detail::to_byte(v) / 255.0;
    for (std::size_t d = 0; d < kSynthDistortions.size(); ++d) {
      const auto& spec = kSynthDistortions[d];
      for (std::size_t level = 0; level < opts.levels; ++level) {
        const double severity = synth_severity(level, opts.levels);
        Rng noise_rng = make_rng(derive_seed(derive_seed(opts.seed, r), 1000 + d * 100 + level));
        const GrayImage img = synth::distort(ref, spec.name, severity, noise_rng);
        ManifestRow row;
        row.image_id = std::string(ref_id) + "_" + spec.name + "_" + std::to_string(level);
        row.image_path = "images/" + row.image_id + ".pgm";
        row.ref_id = ref_id;
        row.distortion_type = spec.name;
        row.level = std::to_string(level);
        row.mos = synth_mos(severity, spec.mos_rate);
        write_pgm(img, (fs::path(out_dir) / row.image_path).string());
        relative.rows.push_back(std::move(row));
      }
    }
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  write_manifest(relative, manifest_path);
  return load_manifest(manifest_path);
}

}  // namespace iqe
