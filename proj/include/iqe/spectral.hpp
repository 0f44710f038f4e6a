#pragma once

// Radially averaged power spectra of codebook codes.

#include <Eigen/Core>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include "iqe/codebook.hpp"
#include "iqe/csv.hpp"
#include "iqe/error.hpp"

namespace iqe {

/// size x size grid of |DFT|^2 in natural (unshifted) order: cell (r, c)
/// holds vertical frequency r and horizontal frequency c, DC at (0, 0).
using PowerGrid = Eigen::MatrixXd;

struct RadialSpectrum {
  std::vector<double> bins;  // bin 0 is DC
  std::string subset_label;
};

inline std::size_t square_side(std::size_t length) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(length))));
  if (side == 0 || side * side != length) {
    throw DimensionError("code length " + std::to_string(length) + " is not a square");
  }
  return side;
}

/// Squared magnitude of the unnormalized 2D DFT of a row-major size x size
/// code, computed separably (rows, then columns).
inline PowerGrid code_power_spectrum(const Eigen::VectorXd& code, std::size_t size) {
  if (size == 0 || static_cast<std::size_t>(code.size()) != size * size) {
    throw DimensionError("code of length " + std::to_string(code.size()) + " is not " + std::to_string(size) + "x" +
                         std::to_string(size));
  }
  const auto n = static_cast<Eigen::Index>(size);
  // Twiddles e^{-2 pi i k / n}.
  std::vector<std::complex<double>> w(size);
  for (std::size_t k = 0; k < size; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(size);
    w[k] = {std::cos(angle), std::sin(angle)};
  }
  Eigen::MatrixXcd rows(n, n);  // rows(r, v): DFT along each row
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index v = 0; v < n; ++v) {
      std::complex<double> acc = 0.0;
      for (Eigen::Index c = 0; c < n; ++c) acc += code(r * n + c) * w[static_cast<std::size_t>((v * c) % n)];
      rows(r, v) = acc;
    }
  }
  PowerGrid grid(n, n);
  for (Eigen::Index u = 0; u < n; ++u) {
    for (Eigen::Index v = 0; v < n; ++v) {
      std::complex<double> acc = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) acc += rows(r, v) * w[static_cast<std::size_t>((u * r) % n)];
      grid(u, v) = std::norm(acc);
    }
  }
  return grid;
}

/// Signed frequency of DFT index i in an n-point transform.
inline long centred_frequency(long i, long n) { return i <= n / 2 ? i : i - n; }

/// Number of radial bins for a size x size grid: round(max radius) + 1.
inline std::size_t radial_bin_count(std::size_t size) {
  const long n = static_cast<long>(size);
  long max_r2 = 0;
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) {
      const long u = centred_frequency(i, n), v = centred_frequency(j, n);
      max_r2 = std::max(max_r2, u * u + v * v);
    }
  return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(max_r2)))) + 1;
}

/// Mean power per integer radius bin, bin = round(sqrt(u^2 + v^2)).
inline RadialSpectrum radial_average(const PowerGrid& grid) {
  if (grid.rows() != grid.cols() || grid.rows() == 0) throw DimensionError("power grid must be square and non-empty");
  const long n = static_cast<long>(grid.rows());
  const std::size_t bins = radial_bin_count(static_cast<std::size_t>(n));
  std::vector<double> sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      const long u = centred_frequency(i, n), v = centred_frequency(j, n);
      const auto b = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(u * u + v * v))));
      sum[b] += grid(i, j);
      ++count[b];
    }
  }
  RadialSpectrum out;
  out.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) out.bins[b] = count[b] ? sum[b] / static_cast<double>(count[b]) : 0.0;
  return out;
}

/// Maps a feature ranking over 2k soft-encoded features to code indices
/// (feature f comes from code f mod k), keeping each code's first occurrence.
inline std::vector<std::size_t> rank_codes(const std::vector<std::size_t>& feature_ranking, std::size_t k) {
  std::vector<std::size_t> codes;
  std::vector<bool> seen(k, false);
  for (auto f : feature_ranking) {
    const std::size_t c = f % k;
    if (!seen[c]) {
      seen[c] = true;
      codes.push_back(c);
    }
  }
  return codes;
}

inline std::string subset_label(std::size_t index, std::size_t subset_size) {
  if (index == 0) return "top " + std::to_string(subset_size);
  return "top " + std::to_string(index * subset_size) + "-" + std::to_string((index + 1) * subset_size);
}

/// Mean radial spectrum of each consecutive block of `subset_size` codes in
/// importance order, all divided by the largest bin value across the blocks.
inline std::vector<RadialSpectrum> subset_spectra(const Codebook& codebook,
                                                  const std::vector<std::size_t>& feature_ranking,
                                                  std::size_t subset_size, std::size_t n_subsets) {
  const std::size_t k = codebook.size();
  if (subset_size == 0 || n_subsets == 0) throw ConfigError("subset size and count must be positive");
  if (subset_size * n_subsets > k) {
    throw ConfigError(std::to_string(n_subsets) + " subsets of " + std::to_string(subset_size) +
                      " codes exceed codebook size " + std::to_string(k));
  }
  const std::size_t side = square_side(codebook.dim());
  const auto codes = rank_codes(feature_ranking, k);
  if (codes.size() < subset_size * n_subsets) {
    throw DimensionError("ranking covers only " + std::to_string(codes.size()) + " distinct codes, need " +
                         std::to_string(subset_size * n_subsets));
  }
  std::vector<RadialSpectrum> spectra;
  double global_max = 0.0;
  for (std::size_t s = 0; s < n_subsets; ++s) {
    RadialSpectrum mean;
    mean.subset_label = subset_label(s, subset_size);
    mean.bins.assign(radial_bin_count(side), 0.0);
    for (std::size_t i = s * subset_size; i < (s + 1) * subset_size; ++i) {
      const auto one = radial_average(code_power_spectrum(codebook.codes.col(static_cast<Eigen::Index>(codes[i])), side));
      for (std::size_t b = 0; b < mean.bins.size(); ++b) mean.bins[b] += one.bins[b];
    }
    for (auto& v : mean.bins) {
      v /= static_cast<double>(subset_size);
      global_max = std::max(global_max, v);
    }
    spectra.push_back(std::move(mean));
  }
  if (global_max > 0.0) {
    for (auto& sp : spectra)
      for (auto& v : sp.bins) v /= global_max;
  }
  return spectra;
}

/// CSV rows "model,subset_label,bin_index,normalized_power".
inline void write_spectra_csv(std::ostream& out, const std::string& model, const std::vector<RadialSpectrum>& spectra,
                              bool header = true) {
  if (header) out << "model,subset_label,bin_index,normalized_power\n";
  for (const auto& sp : spectra) {
    for (std::size_t b = 0; b < sp.bins.size(); ++b) {
      out << csv::quote(model) << ',' << csv::quote(sp.subset_label) << ',' << b << ','
          << csv::format_double(sp.bins[b]) << '\n';
    }
  }
}

}  // namespace iqe
