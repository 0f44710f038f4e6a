#pragma once

// Linear nu-support vector regression on [-1, 1]-scaled features.
//
// The dual solved here is, with a = (alpha, alpha*) in R^{2n}, z = (+1.., -1..)
// and K = X X^T:
//
//   min  1/2 a^T Q a + p^T a,   Q_st = z_s z_t K(s mod n, t mod n),
//                               p = (-y, +y)
//   s.t. z^T a = 0,  sum(a) = nu * n * U,  0 <= a_t <= U
//
// U is the per-sample box bound: U = C (LIBSVM/scikit-learn NuSVR) or C / n
// (textbook primal with the 1/n loss average).

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "iqe/csv.hpp"
#include "iqe/error.hpp"

namespace iqe {

// ---------------------------------------------------------------------------
// Feature scaling

/// Column-wise affine map of the training range onto [-1, 1]. Constant
/// columns map to 0. Test data is transformed with the training parameters
/// and is not clamped.
struct FeatureScaler {
  Eigen::VectorXd min;
  Eigen::VectorXd max;

  std::size_t size() const { return static_cast<std::size_t>(min.size()); }

  double transform_value(Eigen::Index f, double x) const {
    const double range = max(f) - min(f);
    if (!(range > 0.0)) return 0.0;
    return 2.0 * (x - min(f)) / range - 1.0;
  }

  Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const {
    if (rows.cols() != min.size()) {
      throw DimensionError("scaler expects " + std::to_string(min.size()) + " features, got " +
                           std::to_string(rows.cols()));
    }
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    for (Eigen::Index f = 0; f < rows.cols(); ++f)
      for (Eigen::Index r = 0; r < rows.rows(); ++r) out(r, f) = transform_value(f, rows(r, f));
    return out;
  }

  Eigen::VectorXd transform(const Eigen::VectorXd& x) const {
    if (x.size() != min.size()) {
      throw DimensionError("scaler expects " + std::to_string(min.size()) + " features, got " + std::to_string(x.size()));
    }
    Eigen::VectorXd out(x.size());
    for (Eigen::Index f = 0; f < x.size(); ++f) out(f) = transform_value(f, x(f));
    return out;
  }

  FeatureScaler select(const std::vector<std::size_t>& columns) const {
    FeatureScaler s;
    s.min.resize(static_cast<Eigen::Index>(columns.size()));
    s.max.resize(static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) {
      s.min(static_cast<Eigen::Index>(i)) = min(static_cast<Eigen::Index>(columns[i]));
      s.max(static_cast<Eigen::Index>(i)) = max(static_cast<Eigen::Index>(columns[i]));
    }
    return s;
  }
};

inline FeatureScaler fit_scaler(const Eigen::MatrixXd& features) {
  if (features.rows() == 0 || features.cols() == 0) throw DimensionError("cannot fit a scaler on empty features");
  if (!features.allFinite()) throw Error("features contain non-finite values");
  FeatureScaler s;
  s.min = features.colwise().minCoeff().transpose();
  s.max = features.colwise().maxCoeff().transpose();
  return s;
}

// ---------------------------------------------------------------------------
// nu-SVR

enum class BoxConvention {
  /// alpha_i <= C, sum(alpha + alpha*) = C nu n (LIBSVM / scikit-learn NuSVR).
  libsvm,
  /// alpha_i <= C / n, sum(alpha + alpha*) = C nu.
  per_sample,
};

struct SvrParams {
  double nu = 0.5;
  double cost = 1.0;
  double tol = 1e-3;
  BoxConvention box = BoxConvention::libsvm;
  std::uint64_t max_updates = 10'000'000;
};

struct SvrModel {
  Eigen::VectorXd weights;  // in scaled feature space, one per active feature
  double bias = 0.0;
  double nu = 0.5;
  double cost = 1.0;
  double epsilon_star = 0.0;
  BoxConvention box = BoxConvention::libsvm;
  FeatureScaler scaler;  // over the active features
  /// Raw feature count the model was trained from.
  std::size_t input_dim = 0;
  /// Indices (into raw features) the model uses; empty = all features.
  std::vector<std::size_t> active_features;
  /// Dual coefficients alpha_i - alpha*_i of the training rows.
  Eigen::VectorXd dual_coef;
  double dual_objective = 0.0;
  std::uint64_t updates = 0;
  bool trained = false;

  std::size_t feature_count() const { return static_cast<std::size_t>(weights.size()); }
};

inline double box_bound(const SvrParams& p, std::size_t n) {
  return p.box == BoxConvention::libsvm ? p.cost : p.cost / static_cast<double>(n);
}

/// Result of the dual solve alone, independent of how K was produced.
struct NuSvrDualSolution {
  Eigen::VectorXd alpha;       // 2n variables (alpha, alpha*)
  Eigen::VectorXd coef;        // alpha - alpha*
  double bias = 0.0;
  double epsilon_star = 0.0;
  double objective = 0.0;
  double max_violation = 0.0;
  std::uint64_t updates = 0;
};

namespace detail {

inline double signed_q(const Eigen::MatrixXd& kernel, std::size_t n, std::size_t s, std::size_t t) {
  const double sign = ((s < n) == (t < n)) ? 1.0 : -1.0;
  return sign * kernel(static_cast<Eigen::Index>(s % n), static_cast<Eigen::Index>(t % n));
}

}  // namespace detail

/// SMO on the nu-SVR dual for a precomputed n x n kernel. Each step takes the
/// maximal KKT-violating pair inside one of the two sign classes and solves the
/// two-variable subproblem exactly. Stops once the largest violation drops
/// below tol.
inline NuSvrDualSolution solve_nusvr_dual(const Eigen::MatrixXd& kernel, const Eigen::VectorXd& y,
                                          const SvrParams& params) {
  const std::size_t n = static_cast<std::size_t>(y.size());
  if (kernel.rows() != y.size() || kernel.cols() != y.size()) throw DimensionError("kernel/target size mismatch");
  if (n < 2) throw ConfigError("nu-SVR needs at least two training samples");
  if (!(params.nu > 0.0 && params.nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  if (!(params.cost > 0.0) || !std::isfinite(params.cost)) throw ConfigError("cost must be positive and finite");
  if (!(params.tol > 0.0)) throw ConfigError("tolerance must be positive");
  if (!kernel.allFinite() || !y.allFinite()) throw Error("nu-SVR inputs contain non-finite values");

  const std::size_t m = 2 * n;
  const double upper = box_bound(params, n);
  std::vector<double> a(m, 0.0);
  std::vector<double> z(m, 1.0);
  std::vector<double> p(m);
  for (std::size_t i = 0; i < n; ++i) {
    z[i + n] = -1.0;
    p[i] = -y(static_cast<Eigen::Index>(i));
    p[i + n] = y(static_cast<Eigen::Index>(i));
  }
  // Feasible start: spread nu*n*U/2 over each half, front to back.
  double remaining = params.nu * static_cast<double>(n) * upper / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::min(remaining, upper);
    a[i] = a[i + n] = v;
    remaining -= v;
  }

  // Gradient G = Q a + p. Q a only depends on beta = alpha - alpha*.
  Eigen::VectorXd beta(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) beta(static_cast<Eigen::Index>(i)) = a[i] - a[i + n];
  const Eigen::VectorXd kb = kernel * beta;
  std::vector<double> grad(m);
  for (std::size_t t = 0; t < m; ++t) grad[t] = z[t] * kb(static_cast<Eigen::Index>(t % n)) + p[t];

  const auto in_up = [&](std::size_t t) { return z[t] > 0 ? a[t] < upper : a[t] > 0.0; };
  const auto in_low = [&](std::size_t t) { return z[t] > 0 ? a[t] > 0.0 : a[t] < upper; };

  NuSvrDualSolution sol;
  std::uint64_t updates = 0;
  double violation = 0.0;
  for (;;) {
    // Per class: i maximizes -z G over the "up" set, j minimizes it over "low".
    double best_gap = -std::numeric_limits<double>::infinity();
    std::size_t bi = m, bj = m;
    for (int cls = 0; cls < 2; ++cls) {
      const std::size_t lo = cls == 0 ? 0 : n;
      double up_max = -std::numeric_limits<double>::infinity();
      double low_min = std::numeric_limits<double>::infinity();
      std::size_t ui = m, lj = m;
      for (std::size_t t = lo; t < lo + n; ++t) {
        const double v = -z[t] * grad[t];
        if (in_up(t) && v > up_max) {
          up_max = v;
          ui = t;
        }
        if (in_low(t) && v < low_min) {
          low_min = v;
          lj = t;
        }
      }
      if (ui < m && lj < m && up_max - low_min > best_gap) {
        best_gap = up_max - low_min;
        bi = ui;
        bj = lj;
      }
    }
    violation = bi < m ? best_gap : 0.0;
    if (bi >= m || violation < params.tol) break;
    if (updates >= params.max_updates) {
      throw Error("nu-SVR solver did not converge within " + std::to_string(params.max_updates) +
                  " pair updates (violation " + std::to_string(violation) + ")");
    }
    ++updates;

    const std::size_t i = bi, j = bj;
    const double qii = detail::signed_q(kernel, n, i, i);
    const double qjj = detail::signed_q(kernel, n, j, j);
    const double qij = detail::signed_q(kernel, n, i, j);
    double curvature = qii + qjj - 2.0 * qij;
    if (curvature <= 0.0) curvature = 1e-12;
    const double old_i = a[i], old_j = a[j];
    // Move along a_i += z d, a_j -= z d (keeps both equality constraints).
    const double delta = (grad[i] - grad[j]) / curvature;
    const double sum = old_i + old_j;
    double new_i = old_i - delta;
    double new_j = old_j + delta;
    if (sum > upper) {
      if (new_i > upper) {
        new_i = upper;
        new_j = sum - upper;
      }
    } else if (new_j < 0.0) {
      new_j = 0.0;
      new_i = sum;
    }
    if (sum > upper) {
      if (new_j > upper) {
        new_j = upper;
        new_i = sum - upper;
      }
    } else if (new_i < 0.0) {
      new_i = 0.0;
      new_j = sum;
    }
    a[i] = new_i;
    a[j] = new_j;
    const double di = new_i - old_i;
    const double dj = new_j - old_j;
    if (di == 0.0 && dj == 0.0) {
      // Numerically stuck pair; treat as converged at the current violation.
      break;
    }
    const Eigen::Index ri = static_cast<Eigen::Index>(i % n);
    const Eigen::Index rj = static_cast<Eigen::Index>(j % n);
    for (std::size_t t = 0; t < m; ++t) {
      const Eigen::Index rt = static_cast<Eigen::Index>(t % n);
      grad[t] += z[t] * (z[i] * kernel(rt, ri) * di + z[j] * kernel(rt, rj) * dj);
    }
  }

  // Bias and tube width from free variables of each class, falling back to the
  // midpoint of the feasible interval.
  double r[2];
  for (int cls = 0; cls < 2; ++cls) {
    const std::size_t lo = cls == 0 ? 0 : n;
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = lo; t < lo + n; ++t) {
      if (a[t] >= upper) {
        lb = std::max(lb, grad[t]);
      } else if (a[t] <= 0.0) {
        ub = std::min(ub, grad[t]);
      } else {
        free_sum += grad[t];
        ++free_count;
      }
    }
    if (free_count > 0) {
      r[cls] = free_sum / static_cast<double>(free_count);
    } else if (std::isfinite(ub) && std::isfinite(lb)) {
      r[cls] = 0.5 * (ub + lb);
    } else {
      r[cls] = std::isfinite(ub) ? ub : lb;
    }
  }
  const double rho = 0.5 * (r[0] - r[1]);
  sol.bias = -rho;
  sol.epsilon_star = -0.5 * (r[0] + r[1]);

  sol.alpha.resize(static_cast<Eigen::Index>(m));
  sol.coef.resize(static_cast<Eigen::Index>(n));
  double obj = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    sol.alpha(static_cast<Eigen::Index>(t)) = a[t];
    obj += a[t] * (grad[t] + p[t]);
  }
  for (std::size_t i = 0; i < n; ++i) sol.coef(static_cast<Eigen::Index>(i)) = a[i] - a[i + n];
  sol.objective = 0.5 * obj;
  sol.max_violation = violation;
  sol.updates = updates;
  return sol;
}

/// Dual objective 1/2 a^T Q a + p^T a for an arbitrary feasible a.
inline double nusvr_dual_objective(const Eigen::MatrixXd& kernel, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& alpha) {
  const Eigen::Index n = y.size();
  const Eigen::VectorXd beta = alpha.head(n) - alpha.tail(n);
  return 0.5 * beta.dot(kernel * beta) - y.dot(beta);
}

/// Trains on already-scaled rows. The returned model carries an identity
/// scaler of the right size; train_nusvr_raw attaches a fitted one.
inline SvrModel train_nusvr(const Eigen::MatrixXd& scaled, const Eigen::VectorXd& y, const SvrParams& params = {}) {
  if (scaled.rows() != y.size()) throw DimensionError("feature rows and targets differ in count");
  if (!scaled.allFinite() || !y.allFinite()) throw Error("nu-SVR inputs contain non-finite values");
  const Eigen::MatrixXd kernel = scaled * scaled.transpose();
  const NuSvrDualSolution sol = solve_nusvr_dual(kernel, y, params);
  SvrModel model;
  model.weights = scaled.transpose() * sol.coef;
  model.bias = sol.bias;
  model.nu = params.nu;
  model.cost = params.cost;
  model.box = params.box;
  model.epsilon_star = sol.epsilon_star;
  model.dual_coef = sol.coef;
  model.dual_objective = sol.objective;
  model.updates = sol.updates;
  model.input_dim = static_cast<std::size_t>(scaled.cols());
  model.scaler.min = Eigen::VectorXd::Constant(scaled.cols(), -1.0);
  model.scaler.max = Eigen::VectorXd::Constant(scaled.cols(), 1.0);
  model.trained = true;
  return model;
}

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& columns) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] >= static_cast<std::size_t>(m.cols())) throw DimensionError("feature index out of range");
    out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(columns[c]));
  }
  return out;
}

/// Fits the scaler on raw training features (optionally restricted to
/// `active`), scales and trains. This is the path experiments use.
inline SvrModel train_nusvr_raw(const Eigen::MatrixXd& raw, const Eigen::VectorXd& y, const SvrParams& params = {},
                                std::vector<std::size_t> active = {}) {
  const Eigen::MatrixXd used = active.empty() ? raw : select_columns(raw, active);
  const FeatureScaler scaler = fit_scaler(used);
  SvrModel model = train_nusvr(scaler.transform(used), y, params);
  model.scaler = scaler;
  model.input_dim = static_cast<std::size_t>(raw.cols());
  model.active_features = std::move(active);
  return model;
}

/// Prediction on a raw feature vector: either the full raw vector
/// (length input_dim) or, for subset models, the already-selected features.
inline double predict(const SvrModel& model, const Eigen::VectorXd& x) {
  if (!model.trained) throw Error("model is not trained");
  const auto f = static_cast<Eigen::Index>(model.feature_count());
  if (model.active_features.empty() || x.size() == f) {
    if (x.size() != f) {
      throw DimensionError("model expects " + std::to_string(f) + " features, got " + std::to_string(x.size()));
    }
    return model.weights.dot(model.scaler.transform(x)) + model.bias;
  }
  if (static_cast<std::size_t>(x.size()) != model.input_dim) {
    throw DimensionError("model expects " + std::to_string(model.input_dim) + " or " + std::to_string(f) +
                         " features, got " + std::to_string(x.size()));
  }
  Eigen::VectorXd sel(f);
  for (Eigen::Index i = 0; i < f; ++i) sel(i) = x(static_cast<Eigen::Index>(model.active_features[static_cast<std::size_t>(i)]));
  return model.weights.dot(model.scaler.transform(sel)) + model.bias;
}

/// Predictions for every row of a raw feature matrix.
inline Eigen::VectorXd predict_rows(const SvrModel& model, const Eigen::MatrixXd& raw) {
  Eigen::VectorXd out(raw.rows());
  for (Eigen::Index r = 0; r < raw.rows(); ++r) out(r) = predict(model, raw.row(r).transpose());
  return out;
}

/// Feature indices ordered by |w| descending; ties keep the lower index first.
/// Indices refer to raw features when the model uses a subset.
inline std::vector<std::size_t> feature_importance(const SvrModel& model) {
  if (!model.trained) throw Error("model is not trained");
  std::vector<std::size_t> order(model.feature_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(model.weights(static_cast<Eigen::Index>(a))) > std::abs(model.weights(static_cast<Eigen::Index>(b)));
  });
  if (!model.active_features.empty()) {
    for (auto& idx : order) idx = model.active_features[idx];
  }
  return order;
}

// ---------------------------------------------------------------------------
// Model file: sectioned CSV, shortest round-trip doubles.

inline std::string to_string(BoxConvention box) { return box == BoxConvention::libsvm ? "libsvm" : "per_sample"; }

inline BoxConvention parse_box_convention(const std::string& s) {
  if (s == "libsvm") return BoxConvention::libsvm;
  if (s == "per_sample") return BoxConvention::per_sample;
  throw ConfigError("unknown box convention '" + s + "' (expected libsvm or per_sample)");
}

inline void save_model(const SvrModel& model, const std::string& path) {
  auto out = csv::open_output(path);
  out << "[hyperparameters]\n";
  out << "nu," << csv::format_double(model.nu) << '\n';
  out << "cost," << csv::format_double(model.cost) << '\n';
  out << "box," << to_string(model.box) << '\n';
  out << "epsilon_star," << csv::format_double(model.epsilon_star) << '\n';
  out << "bias," << csv::format_double(model.bias) << '\n';
  out << "input_dim," << model.input_dim << '\n';
  out << "[scaler]\nindex,min,max\n";
  for (Eigen::Index f = 0; f < model.scaler.min.size(); ++f) {
    out << f << ',' << csv::format_double(model.scaler.min(f)) << ',' << csv::format_double(model.scaler.max(f)) << '\n';
  }
  out << "[weights]\nindex,weight\n";
  for (Eigen::Index f = 0; f < model.weights.size(); ++f) out << f << ',' << csv::format_double(model.weights(f)) << '\n';
  out << "[active_features]\nindex\n";
  for (auto idx : model.active_features) out << idx << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline SvrModel load_model(const std::string& path) {
  const auto lines = csv::read_lines(path);
  SvrModel model;
  std::string section;
  std::vector<double> mins, maxs, weights;
  bool have_bias = false;
  for (const auto& raw : lines) {
    const std::string line = csv::trim(raw);
    if (line.front() == '[') {
      section = line;
      continue;
    }
    const auto f = csv::split_line(line);
    if (section == "[hyperparameters]") {
      if (f.size() != 2) throw IoError("bad hyperparameter line '" + line + "' in '" + path + "'");
      if (f[0] == "nu") model.nu = csv::parse_double(f[1]);
      else if (f[0] == "cost") model.cost = csv::parse_double(f[1]);
      else if (f[0] == "box") model.box = parse_box_convention(f[1]);
      else if (f[0] == "epsilon_star") model.epsilon_star = csv::parse_double(f[1]);
      else if (f[0] == "bias") { model.bias = csv::parse_double(f[1]); have_bias = true; }
      else if (f[0] == "input_dim") model.input_dim = static_cast<std::size_t>(csv::parse_int(f[1]));
      else throw IoError("unknown hyperparameter '" + f[0] + "' in '" + path + "'");
    } else if (section == "[scaler]") {
      if (f[0] == "index") continue;
      if (f.size() != 3 || csv::parse_int(f[0]) != static_cast<std::int64_t>(mins.size())) {
        throw IoError("bad scaler line '" + line + "' in '" + path + "'");
      }
      mins.push_back(csv::parse_double(f[1]));
      maxs.push_back(csv::parse_double(f[2]));
    } else if (section == "[weights]") {
      if (f[0] == "index") continue;
      if (f.size() != 2 || csv::parse_int(f[0]) != static_cast<std::int64_t>(weights.size())) {
        throw IoError("bad weight line '" + line + "' in '" + path + "'");
      }
      weights.push_back(csv::parse_double(f[1]));
    } else if (section == "[active_features]") {
      if (f[0] == "index") continue;
      model.active_features.push_back(static_cast<std::size_t>(csv::parse_int(f[0])));
    } else {
      throw IoError("content outside a section in '" + path + "'");
    }
  }
  if (!have_bias || weights.empty() || weights.size() != mins.size()) {
    throw IoError("model file '" + path + "' is incomplete");
  }
  if (!model.active_features.empty() && model.active_features.size() != weights.size()) {
    throw IoError("model file '" + path + "' has inconsistent active_features");
  }
  model.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  model.scaler.min = Eigen::Map<Eigen::VectorXd>(mins.data(), static_cast<Eigen::Index>(mins.size()));
  model.scaler.max = Eigen::Map<Eigen::VectorXd>(maxs.data(), static_cast<Eigen::Index>(maxs.size()));
  if (model.input_dim == 0) model.input_dim = weights.size();
  model.trained = true;
  return model;
}

}  // namespace iqe
