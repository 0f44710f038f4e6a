#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "iqe/codebook.hpp"
#include "iqe/csv.hpp"
#include "iqe/error.hpp"
#include "iqe/image.hpp"
#include "iqe/parallel.hpp"
#include "iqe/rng.hpp"

namespace iqe {

/// k x l code/descriptor dot products, S = D^T X.
struct EncodingMatrix {
  Eigen::MatrixXd values;
};

/// Pooled soft-encoded features: entries [0, k) are positive parts, [k, 2k)
/// negative parts.
using FeatureVector = Eigen::VectorXd;

inline EncodingMatrix encode(const Codebook& codebook, const DescriptorSet& set) {
  if (set.dim() != codebook.dim()) {
    throw DimensionError("descriptor dimension " + std::to_string(set.dim()) + " does not match codebook dimension " +
                         std::to_string(codebook.dim()));
  }
  EncodingMatrix s;
  s.values.noalias() = codebook.codes.transpose() * set.columns;
  return s;
}

/// beta_i = max_j max(s_ij, 0), beta_{k+i} = max_j max(-s_ij, 0).
inline FeatureVector soft_encode_pool(const EncodingMatrix& s) {
  const Eigen::Index k = s.values.rows();
  const Eigen::Index l = s.values.cols();
  if (k == 0 || l == 0) throw DimensionError("cannot pool an empty encoding matrix");
  FeatureVector beta = FeatureVector::Zero(2 * k);
  for (Eigen::Index j = 0; j < l; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) {
      const double v = s.values(i, j);
      if (v > beta(i)) beta(i) = v;
      if (-v > beta(k + i)) beta(k + i) = -v;
    }
  }
  return beta;
}

struct PatchParams {
  std::size_t size = 7;
  std::size_t count = 10000;
};

/// sample_patches -> standardize -> encode -> soft_encode_pool. Descriptors
/// are encoded in blocks so the k x l encoding matrix never has to be held in
/// full for large codebooks.
inline FeatureVector extract_features(const Codebook& codebook, const GrayImage& img, const PatchParams& patches,
                                      Rng& rng) {
  if (codebook.dim() != patches.size * patches.size) {
    throw DimensionError("codebook dimension " + std::to_string(codebook.dim()) + " does not match " +
                         std::to_string(patches.size) + "x" + std::to_string(patches.size) + " patches");
  }
  const DescriptorSet desc = standardize(sample_patches(img, patches.count, patches.size, rng));
  constexpr Eigen::Index kBlock = 1024;
  const Eigen::Index k = static_cast<Eigen::Index>(codebook.size());
  FeatureVector beta = FeatureVector::Zero(2 * k);
  Eigen::MatrixXd block;
  for (Eigen::Index start = 0; start < desc.columns.cols(); start += kBlock) {
    const Eigen::Index width = std::min(kBlock, desc.columns.cols() - start);
    block.noalias() = codebook.codes.transpose() * desc.columns.middleCols(start, width);
    beta.head(k) = beta.head(k).cwiseMax(block.rowwise().maxCoeff());
    beta.tail(k) = beta.tail(k).cwiseMax((-block).rowwise().maxCoeff());
  }
  return beta;
}

/// Per-image seed used by batch extraction: image i of a run rooted at
/// `master_seed` always sees the same patches.
inline std::uint64_t image_seed(std::uint64_t master_seed, std::size_t image_index) {
  return derive_seed(master_seed, image_index);
}

/// Extracts features for every image path; row i of the result belongs to
/// paths[i] regardless of scheduling.
inline Eigen::MatrixXd extract_batch(const Codebook& codebook, const std::vector<std::string>& paths,
                                     const PatchParams& patches, std::uint64_t master_seed, unsigned jobs) {
  Eigen::MatrixXd features(static_cast<Eigen::Index>(paths.size()), static_cast<Eigen::Index>(2 * codebook.size()));
  parallel_for(paths.size(), jobs, [&](std::size_t i) {
    const GrayImage img = load_grayscale(paths[i]);
    Rng rng = make_rng(image_seed(master_seed, i));
    features.row(static_cast<Eigen::Index>(i)) = extract_features(codebook, img, patches, rng).transpose();
  });
  return features;
}

// ---------------------------------------------------------------------------
// Feature CSV: header "image_id,f0,...,f{2k-1}", one row per image.

struct FeatureTable {
  std::vector<std::string> image_ids;
  Eigen::MatrixXd values;  // rows = images
};

inline void write_features_csv(const FeatureTable& table, const std::string& path) {
  auto out = csv::open_output(path);
  out << "image_id";
  for (Eigen::Index f = 0; f < table.values.cols(); ++f) out << ",f" << f;
  out << '\n';
  for (std::size_t r = 0; r < table.image_ids.size(); ++r) {
    out << csv::quote(table.image_ids[r]);
    for (Eigen::Index f = 0; f < table.values.cols(); ++f) {
      out << ',' << csv::format_double(table.values(static_cast<Eigen::Index>(r), f));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline FeatureTable read_features_csv(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw IoError("feature file '" + path + "' is empty");
  const auto header = csv::split_line(lines[0]);
  if (header.empty() || header[0] != "image_id") throw IoError("feature file '" + path + "' lacks an image_id header");
  const std::size_t width = header.size() - 1;
  for (std::size_t f = 0; f < width; ++f) {
    if (header[f + 1] != "f" + std::to_string(f)) throw IoError("unexpected feature column '" + header[f + 1] + "'");
  }
  FeatureTable table;
  table.values.resize(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(width));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = csv::split_line(lines[r]);
    if (fields.size() != width + 1) {
      throw IoError("feature file '" + path + "' line " + std::to_string(r + 1) + " has " +
                    std::to_string(fields.size()) + " fields, expected " + std::to_string(width + 1));
    }
    table.image_ids.push_back(fields[0]);
    for (std::size_t f = 0; f < width; ++f) {
      table.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(f)) = csv::parse_double(fields[f + 1]);
    }
  }
  return table;
}

}  // namespace iqe
