#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "iqe/error.hpp"

namespace iqe {

struct CorrelationReport {
  double pcc = 0.0;
  double srocc = 0.0;
  std::size_t n = 0;
  std::string subset = "full";
};

namespace detail {

inline void check_pair(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionError("correlation inputs differ in length");
  if (a.size() < 3) throw DimensionError("correlation needs at least 3 samples, got " + std::to_string(a.size()));
  if (!a.allFinite() || !b.allFinite()) throw Error("correlation inputs contain non-finite values");
}

}  // namespace detail

/// Sample Pearson correlation. Throws on constant input instead of returning
/// NaN.
inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  detail::check_pair(a, b);
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = (da * da).sum();
  const double sbb = (db * db).sum();
  if (!(saa > 0.0) || !(sbb > 0.0)) throw Error("correlation undefined for constant input");
  const double r = (da * db).sum() / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

/// 1-based ranks; tied values share the average of the ranks they span.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return v(static_cast<Eigen::Index>(x)) < v(static_cast<Eigen::Index>(y));
  });
  Eigen::VectorXd ranks(v.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && v(static_cast<Eigen::Index>(order[j])) == v(static_cast<Eigen::Index>(order[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) ranks(static_cast<Eigen::Index>(order[t])) = avg;
    i = j;
  }
  return ranks;
}

inline double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  detail::check_pair(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

inline CorrelationReport correlate(const Eigen::VectorXd& predicted, const Eigen::VectorXd& mos,
                                   std::string subset = "full") {
  CorrelationReport r;
  r.pcc = pearson(predicted, mos);
  r.srocc = spearman(predicted, mos);
  r.n = static_cast<std::size_t>(mos.size());
  r.subset = std::move(subset);
  return r;
}

}  // namespace iqe
