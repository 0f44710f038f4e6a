#pragma once

// Visual codebooks: k-means-learned, natural patches, and i.i.d. noise; plus
// the ZCA whitening used when learning a codebook.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "iqe/error.hpp"
#include "iqe/image.hpp"
#include "iqe/rng.hpp"

namespace iqe {

enum class CodebookKind : std::uint8_t { learned = 0, patches = 1, normal = 2, laplace = 3, uniform = 4 };

inline std::string_view to_string(CodebookKind kind) {
  switch (kind) {
    case CodebookKind::learned: return "learned";
    case CodebookKind::patches: return "patches";
    case CodebookKind::normal: return "normal";
    case CodebookKind::laplace: return "laplace";
    case CodebookKind::uniform: return "uniform";
  }
  return "unknown";
}

inline CodebookKind parse_codebook_kind(std::string_view name) {
  for (auto k : {CodebookKind::learned, CodebookKind::patches, CodebookKind::normal, CodebookKind::laplace,
                 CodebookKind::uniform}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown codebook kind '" + std::string(name) +
                    "' (expected learned, patches, normal, laplace or uniform)");
}

/// d x k matrix of unit-norm codes (one code per column) plus provenance.
struct Codebook {
  Eigen::MatrixXd codes;
  CodebookKind kind = CodebookKind::normal;
  std::uint64_t seed = 0;

  std::size_t dim() const { return static_cast<std::size_t>(codes.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(codes.cols()); }
};

/// Normalizes every column to unit L2 norm. A zero column is left as e_0 so
/// the invariant holds for degenerate inputs.
inline void normalize_columns(Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double n = m.col(j).norm();
    if (n > 0.0 && std::isfinite(n)) {
      m.col(j) /= n;
    } else {
      m.col(j).setZero();
      if (m.rows() > 0) m(0, j) = 1.0;
    }
  }
}

// ---------------------------------------------------------------------------
// ZCA whitening

struct ZcaTransform {
  Eigen::VectorXd mean;
  Eigen::MatrixXd matrix;
  double epsilon = 1e-6;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Fits E (L + eps I)^(-1/2) E^T on the unbiased (n-1) sample covariance of
/// the mean-centred columns.
inline ZcaTransform fit_zca(const DescriptorSet& data, double epsilon = 1e-6) {
  if (data.count() < 2) throw DimensionError("ZCA needs at least two descriptors");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("ZCA epsilon must be finite and >= 0");
  if (!data.columns.allFinite()) throw Error("ZCA input contains non-finite values");
  const double n = static_cast<double>(data.count());
  ZcaTransform t;
  t.epsilon = epsilon;
  t.mean = data.columns.rowwise().sum() / n;
  const Eigen::MatrixXd centred = data.columns.colwise() - t.mean;
  const Eigen::MatrixXd cov = (centred * centred.transpose()) / (n - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("eigendecomposition of descriptor covariance failed");
  Eigen::VectorXd scale(eig.eigenvalues().size());
  for (Eigen::Index i = 0; i < scale.size(); ++i) {
    const double lambda = std::max(eig.eigenvalues()(i), 0.0) + epsilon;
    if (!(lambda > 0.0)) throw Error("singular covariance; use epsilon > 0");
    scale(i) = 1.0 / std::sqrt(lambda);
  }
  const Eigen::MatrixXd& e = eig.eigenvectors();
  t.matrix = e * scale.asDiagonal() * e.transpose();
  t.matrix = 0.5 * (t.matrix + t.matrix.transpose()).eval();
  return t;
}

inline DescriptorSet apply_zca(const ZcaTransform& t, const DescriptorSet& set) {
  if (set.dim() != t.dim()) {
    throw DimensionError("ZCA dimension " + std::to_string(t.dim()) + " does not match descriptors of dimension " +
                         std::to_string(set.dim()));
  }
  DescriptorSet out;
  out.columns = t.matrix * (set.columns.colwise() - t.mean);
  return out;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansOptions {
  std::size_t k = 0;
  std::size_t max_iters = 100;
};

struct KMeansResult {
  Codebook codebook;
  /// Centroids before unit normalization.
  Eigen::MatrixXd raw_centroids;
  std::vector<std::size_t> assignment;
  /// Sum of squared distances after each assignment step.
  std::vector<double> objective_history;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

// Squared distances of every point to every centroid, k x n.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  Eigen::MatrixXd d = -2.0 * (centroids.transpose() * points);
  d.colwise() += centroids.colwise().squaredNorm().transpose();
  d.rowwise() += points.colwise().squaredNorm();
  return d.cwiseMax(0.0);
}

inline Eigen::MatrixXd kmeanspp_seed(const Eigen::MatrixXd& points, std::size_t k, Rng& rng) {
  const Eigen::Index n = points.cols();
  Eigen::MatrixXd centroids(points.rows(), static_cast<Eigen::Index>(k));
  std::size_t first = uniform_index(rng, static_cast<std::uint64_t>(n));
  centroids.col(0) = points.col(static_cast<Eigen::Index>(first));
  Eigen::VectorXd closest = (points.colwise() - centroids.col(0)).colwise().squaredNorm().transpose();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = closest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += closest(i);
        if (acc > target && closest(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    }
    centroids.col(static_cast<Eigen::Index>(c)) = points.col(pick);
    closest = closest.cwiseMin((points.colwise() - points.col(pick)).colwise().squaredNorm().transpose());
  }
  return centroids;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Stops after max_iters or once an
/// assignment pass changes nothing. A cluster that becomes empty is re-seeded
/// with the point currently farthest from its own centroid. The returned
/// codebook holds the unit-normalized centroids.
inline KMeansResult kmeans(const DescriptorSet& data, const KMeansOptions& opts, Rng& rng,
                           std::uint64_t seed_tag = 0) {
  const std::size_t n = data.count();
  const std::size_t k = opts.k;
  if (k == 0) throw ConfigError("k-means needs k >= 1");
  if (k > n) {
    throw ConfigError("k-means with k=" + std::to_string(k) + " needs at least k points, got " + std::to_string(n));
  }
  if (opts.max_iters == 0) throw ConfigError("k-means needs max_iters >= 1");
  const Eigen::MatrixXd& points = data.columns;

  KMeansResult res;
  Eigen::MatrixXd centroids = detail::kmeanspp_seed(points, k, rng);
  std::vector<std::size_t> assign(n, k);

  for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
    const Eigen::MatrixXd dist = detail::squared_distances(points, centroids);
    std::size_t changes = 0;
    double objective = 0.0;
    std::vector<double> own_dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      dist.col(static_cast<Eigen::Index>(i)).minCoeff(&best);
      if (assign[i] != static_cast<std::size_t>(best)) {
        assign[i] = static_cast<std::size_t>(best);
        ++changes;
      }
      own_dist[i] = (points.col(static_cast<Eigen::Index>(i)) - centroids.col(best)).squaredNorm();
      objective += own_dist[i];
    }
    res.objective_history.push_back(objective);
    res.iterations = iter + 1;
    if (changes == 0) {
      res.converged = true;
      break;
    }

    std::vector<std::size_t> counts(k, 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i) {
      sums.col(static_cast<Eigen::Index>(assign[i])) += points.col(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.col(static_cast<Eigen::Index>(c)) = sums.col(static_cast<Eigen::Index>(c)) / counts[c];
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // Farthest point among clusters that can spare one.
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] > 1 && own_dist[i] > far_d) {
          far_d = own_dist[i];
          far = i;
        }
      }
      if (far == n) continue;
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
      own_dist[far] = 0.0;
      centroids.col(static_cast<Eigen::Index>(c)) = points.col(static_cast<Eigen::Index>(far));
    }
  }

  res.raw_centroids = centroids;
  res.assignment = std::move(assign);
  res.codebook.codes = centroids;
  normalize_columns(res.codebook.codes);
  res.codebook.kind = CodebookKind::learned;
  res.codebook.seed = seed_tag;
  return res;
}

// ---------------------------------------------------------------------------
// Random codebooks

/// Draws k patches uniformly across the images (image first, then position),
/// standardizes and unit-normalizes each. Constant patches are redrawn.
inline Codebook patch_codebook(const std::vector<GrayImage>& images, std::size_t k, std::size_t size, Rng& rng,
                               std::uint64_t seed_tag = 0) {
  if (images.empty()) throw ConfigError("patch codebook needs at least one image");
  if (k == 0 || size == 0) throw ConfigError("patch codebook needs k >= 1 and size >= 1");
  for (const auto& img : images) {
    if (img.width < size || img.height < size) {
      throw DimensionError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                           " is smaller than patch size " + std::to_string(size));
    }
  }
  const std::size_t max_attempts = 1000 * k + 1000;
  Codebook cb;
  cb.kind = CodebookKind::patches;
  cb.seed = seed_tag;
  cb.codes.resize(static_cast<Eigen::Index>(size * size), static_cast<Eigen::Index>(k));
  Eigen::VectorXd patch(static_cast<Eigen::Index>(size * size));
  std::size_t filled = 0;
  for (std::size_t attempt = 0; filled < k; ++attempt) {
    if (attempt >= max_attempts) throw Error("could not find enough non-constant patches for the patch codebook");
    const GrayImage& img = images[uniform_index(rng, images.size())];
    const std::size_t x = uniform_index(rng, img.width - size + 1);
    const std::size_t y = uniform_index(rng, img.height - size + 1);
    copy_patch(img, x, y, size, patch);
    if ((patch.array() == patch(0)).all()) continue;
    standardize_column(patch);
    cb.codes.col(static_cast<Eigen::Index>(filled++)) = patch;
  }
  normalize_columns(cb.codes);
  return cb;
}

/// The raw (unnormalized) entries a noise codebook is built from.
inline Eigen::MatrixXd sample_noise_matrix(CodebookKind kind, std::size_t d, std::size_t k, Rng& rng) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  switch (kind) {
    case CodebookKind::normal: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
      break;
    }
    case CodebookKind::laplace: {
      // Inverse CDF with location 0, scale 1.
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
          const double u = uniform01(rng) - 0.5;
          const double a = std::max(1.0 - 2.0 * std::abs(u), std::numeric_limits<double>::min());
          m(i, j) = -std::copysign(1.0, u) * std::log(a);
        }
      }
      break;
    }
    case CodebookKind::uniform:
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform01(rng);
      break;
    default:
      throw ConfigError("'" + std::string(to_string(kind)) + "' is not a noise codebook kind");
  }
  return m;
}

/// i.i.d. Normal(0,1), Laplace(0,1) or Uniform(0,1) entries; every column is
/// then unit-normalized. Uniform entries are not centred.
inline Codebook noise_codebook(CodebookKind kind, std::size_t d, std::size_t k, Rng& rng,
                               std::uint64_t seed_tag = 0) {
  if (d == 0 || k == 0) throw ConfigError("noise codebook needs d >= 1 and k >= 1");
  Codebook cb;
  cb.kind = kind;
  cb.seed = seed_tag;
  cb.codes = sample_noise_matrix(kind, d, k, rng);
  normalize_columns(cb.codes);
  return cb;
}

// ---------------------------------------------------------------------------
// CBK1 file format: "CBK1", u32 d, u32 k, u8 kind, u64 seed, d*k f64 column-major,
// all little-endian.

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U bits;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  if (pos + sizeof(T) > in.size()) throw IoError("truncated codebook file");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string serialize_codebook(const Codebook& cb) {
  std::string out = "CBK1";
  out.reserve(4 + 4 + 4 + 1 + 8 + cb.codes.size() * 8);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cb.dim()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cb.size()));
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(cb.kind));
  detail::put_le<std::uint64_t>(out, cb.seed);
  for (Eigen::Index j = 0; j < cb.codes.cols(); ++j)
    for (Eigen::Index i = 0; i < cb.codes.rows(); ++i) detail::put_le<double>(out, cb.codes(i, j));
  return out;
}

inline Codebook deserialize_codebook(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "CBK1") != 0) throw IoError("not a CBK1 codebook file");
  std::size_t pos = 4;
  const auto d = detail::get_le<std::uint32_t>(bytes, pos);
  const auto k = detail::get_le<std::uint32_t>(bytes, pos);
  const auto tag = detail::get_le<std::uint8_t>(bytes, pos);
  if (tag > static_cast<std::uint8_t>(CodebookKind::uniform)) throw IoError("unknown codebook kind tag " + std::to_string(tag));
  Codebook cb;
  cb.kind = static_cast<CodebookKind>(tag);
  cb.seed = detail::get_le<std::uint64_t>(bytes, pos);
  if (bytes.size() - pos != static_cast<std::size_t>(d) * k * 8) throw IoError("codebook payload size does not match header");
  cb.codes.resize(d, k);
  for (Eigen::Index j = 0; j < cb.codes.cols(); ++j)
    for (Eigen::Index i = 0; i < cb.codes.rows(); ++i) cb.codes(i, j) = detail::get_le<double>(bytes, pos);
  return cb;
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_codebook(cb);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Codebook load_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open codebook '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_codebook(bytes);
}

}  // namespace iqe
