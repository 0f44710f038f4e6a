#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "iqe/regression.hpp"
#include "iqe/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace iqe;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 2.0 * uniform01(rng) - 1.0;
  return m;
}

struct Problem {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Problem random_problem(Eigen::Index n, Eigen::Index f, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Problem p;
  p.x = random_matrix(n, f, rng);
  const Eigen::VectorXd w = random_matrix(f, 1, rng);
  p.y = p.x * w + 0.3 * random_matrix(n, 1, rng);
  return p;
}

}  // namespace

TEST(Scaler, MapsRangeToUnitInterval) {
  Eigen::MatrixXd x(2, 1);
  x << 0, 10;
  const auto s = fit_scaler(x);
  const Eigen::MatrixXd t = s.transform(x);
  EXPECT_EQ(t(0, 0), -1.0);
  EXPECT_EQ(t(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.transform_value(0, 5.0), 0.0);
}

TEST(Scaler, ConstantColumnMapsToZero) {
  Eigen::MatrixXd x(3, 2);
  x << 4, 1, 4, 2, 4, 3;
  const auto s = fit_scaler(x);
  EXPECT_TRUE((s.transform(x).col(0).array() == 0.0).all());
  EXPECT_EQ(s.transform_value(0, 100.0), 0.0);
}

TEST(Scaler, OutOfRangeIsNotClamped) {
  Eigen::MatrixXd x(2, 1);
  x << 0, 10;
  EXPECT_DOUBLE_EQ(fit_scaler(x).transform_value(0, 20.0), 3.0);
}

TEST(Scaler, Errors) {
  EXPECT_THROW(fit_scaler(Eigen::MatrixXd(0, 3)), DimensionError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fit_scaler(bad), Error);
  const auto s = fit_scaler(Eigen::MatrixXd::Identity(2, 2));
  EXPECT_THROW(s.transform(Eigen::VectorXd(Eigen::VectorXd::Zero(3))), DimensionError);
}

TEST(NuSvr, ConstantTargetsGiveFlatModel) {
  Rng rng = make_rng(1);
  const Eigen::MatrixXd x = random_matrix(12, 3, rng);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(12, 7.5);
  SvrParams p;
  p.tol = 1e-8;
  const auto m = train_nusvr_raw(x, y, p);
  EXPECT_LT(m.weights.cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(m.bias, 7.5, 1e-9);
  EXPECT_NEAR(m.epsilon_star, 0.0, 1e-9);
  EXPECT_NEAR(predict(m, x.row(3).transpose()), 7.5, 1e-9);
}

TEST(NuSvr, MatchesDenseQpOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(seed % 17);
    const Eigen::Index f = 1 + static_cast<Eigen::Index>(seed % 5);
    const auto prob = random_problem(n, f, seed);
    SvrParams p;
    p.nu = 0.2 + 0.15 * static_cast<double>(seed % 5);
    p.cost = seed % 2 ? 1.0 : 4.0;
    p.tol = 1e-7;
    const Eigen::MatrixXd kernel = prob.x * prob.x.transpose();
    const auto sol = solve_nusvr_dual(kernel, prob.y, p);
    const auto ref = oracle::nusvr_qp(kernel, prob.y, p.nu, box_bound(p, static_cast<std::size_t>(n)), 1e-12);

    const double scale = std::max(1.0, std::abs(ref.objective));
    EXPECT_LE(sol.objective, ref.objective + 1e-3 * scale) << "seed " << seed;
    EXPECT_GE(sol.objective, ref.objective - 1e-3 * scale) << "seed " << seed;
    EXPECT_NEAR(nusvr_dual_objective(kernel, prob.y, sol.alpha), sol.objective, 1e-9 * scale);

    // Feasibility.
    const double half = p.nu * static_cast<double>(n) * box_bound(p, static_cast<std::size_t>(n)) / 2.0;
    EXPECT_NEAR(sol.alpha.head(n).sum(), half, 1e-9 * std::max(1.0, half));
    EXPECT_NEAR(sol.alpha.tail(n).sum(), half, 1e-9 * std::max(1.0, half));
    EXPECT_GE(sol.alpha.minCoeff(), 0.0);
    EXPECT_LE(sol.alpha.maxCoeff(), box_bound(p, static_cast<std::size_t>(n)) + 1e-12);

    // The primal weight vector is unique even when the dual is not.
    const Eigen::VectorXd w = prob.x.transpose() * sol.coef;
    const Eigen::VectorXd w_ref = prob.x.transpose() * (ref.alpha.head(n) - ref.alpha.tail(n));
    EXPECT_LT((w - w_ref).norm(), 1e-3 * std::max(1.0, w_ref.norm())) << "seed " << seed;
  }
}

TEST(NuSvr, PredictionsAgreeWithOracleOnLargerProblem) {
  const auto prob = random_problem(200, 8, 77);
  SvrParams p;
  p.tol = 1e-6;
  const auto model = train_nusvr(prob.x, prob.y, p);
  const Eigen::MatrixXd kernel = prob.x * prob.x.transpose();
  const auto ref = oracle::nusvr_qp(kernel, prob.y, p.nu, p.cost, 1e-12);
  const Eigen::VectorXd w_ref = prob.x.transpose() * (ref.alpha.head(200) - ref.alpha.tail(200));
  EXPECT_NEAR(model.dual_objective, ref.objective, 1e-3 * std::abs(ref.objective));
  // Same bias; compare predictions f(x) - b to isolate the weights.
  const Eigen::VectorXd diff = prob.x * (model.weights - w_ref);
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-3 * std::max(1.0, prob.y.cwiseAbs().maxCoeff()));
  // Roughly a fraction nu of the samples are support vectors; the fit is good.
  const Eigen::VectorXd pred = predict_rows(model, prob.x);
  EXPECT_LT((pred - prob.y).cwiseAbs().mean(), 0.5);
}

TEST(NuSvr, MaxViolationBelowTolerance) {
  const auto prob = random_problem(60, 4, 3);
  SvrParams p;
  p.tol = 1e-5;
  const auto sol = solve_nusvr_dual(prob.x * prob.x.transpose(), prob.y, p);
  EXPECT_LE(sol.max_violation, p.tol);
  EXPECT_GT(sol.updates, 0u);
}

TEST(NuSvr, PerSampleBoxConvention) {
  const auto prob = random_problem(30, 3, 5);
  SvrParams p;
  p.box = BoxConvention::per_sample;
  p.tol = 1e-8;
  const Eigen::MatrixXd kernel = prob.x * prob.x.transpose();
  const auto sol = solve_nusvr_dual(kernel, prob.y, p);
  EXPECT_LE(sol.alpha.maxCoeff(), 1.0 / 30.0 + 1e-12);
  const auto ref = oracle::nusvr_qp(kernel, prob.y, p.nu, 1.0 / 30.0, 1e-13);
  EXPECT_NEAR(sol.objective, ref.objective, 1e-3 * std::max(1.0, std::abs(ref.objective)));
}

TEST(NuSvr, RankingInvariantUnderFeatureScaling) {
  const auto prob = random_problem(40, 5, 11);
  Eigen::MatrixXd stretched = prob.x;
  const Eigen::VectorXd factors = (Eigen::VectorXd(5) << 3.0, 0.25, 10.0, 1.0, 7.0).finished();
  for (Eigen::Index c = 0; c < 5; ++c) stretched.col(c) = stretched.col(c) * factors(c) + Eigen::VectorXd::Constant(40, c);
  SvrParams p;
  p.tol = 1e-8;
  const auto a = train_nusvr_raw(prob.x, prob.y, p);
  const auto b = train_nusvr_raw(stretched, prob.y, p);
  EXPECT_EQ(feature_importance(a), feature_importance(b));
  EXPECT_LT((predict_rows(a, prob.x) - predict_rows(b, stretched)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NuSvr, PredictIsAffine) {
  const auto prob = random_problem(30, 4, 13);
  const auto m = train_nusvr_raw(prob.x, prob.y);
  const Eigen::VectorXd u = prob.x.row(0).transpose(), v = prob.x.row(1).transpose();
  const double t = 0.3;
  EXPECT_NEAR(predict(m, t * u + (1 - t) * v), t * predict(m, u) + (1 - t) * predict(m, v), 1e-12);
}

TEST(NuSvr, Errors) {
  const auto prob = random_problem(10, 2, 1);
  SvrParams p;
  p.nu = 0.0;
  EXPECT_THROW(train_nusvr_raw(prob.x, prob.y, p), ConfigError);
  p.nu = 1.5;
  EXPECT_THROW(train_nusvr_raw(prob.x, prob.y, p), ConfigError);
  p = {};
  p.cost = -1.0;
  EXPECT_THROW(train_nusvr_raw(prob.x, prob.y, p), ConfigError);
  Eigen::VectorXd y = prob.y;
  y(2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_nusvr_raw(prob.x, y, {}), Error);
  EXPECT_THROW(train_nusvr_raw(prob.x, prob.y.head(5), {}), DimensionError);
  EXPECT_THROW(train_nusvr_raw(prob.x.topRows(1), prob.y.head(1), {}), ConfigError);
  EXPECT_THROW(predict(SvrModel{}, Eigen::VectorXd::Zero(2)), Error);
  const auto m = train_nusvr_raw(prob.x, prob.y);
  EXPECT_THROW(predict(m, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(Importance, OrdersByMagnitude) {
  SvrModel m;
  m.weights = Eigen::Vector3d(0.1, -0.9, 0.5);
  m.trained = true;
  EXPECT_EQ(feature_importance(m), (std::vector<std::size_t>{1, 2, 0}));
  m.weights.setZero();
  EXPECT_EQ(feature_importance(m), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Importance, SubsetModelReportsRawIndices) {
  const auto prob = random_problem(30, 6, 21);
  const auto m = train_nusvr_raw(prob.x, prob.y, {}, {1, 4, 5});
  const auto order = feature_importance(m);
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ((std::vector<std::size_t>(order.begin(), order.end())).size(), 3u);
  for (auto idx : order) EXPECT_TRUE(idx == 1 || idx == 4 || idx == 5);
  // Full and pre-selected inputs predict alike.
  const Eigen::VectorXd full = prob.x.row(2).transpose();
  const Eigen::VectorXd sel = Eigen::Vector3d(full(1), full(4), full(5));
  EXPECT_EQ(predict(m, full), predict(m, sel));
}

TEST(ModelFile, RoundTripPredictsIdentically) {
  iqe::testing::TempDir dir;
  const auto prob = random_problem(25, 5, 8);
  SvrParams p;
  p.nu = 0.3;
  p.cost = 2.0;
  const auto m = train_nusvr_raw(prob.x, prob.y, p, {0, 2, 3});
  save_model(m, dir.file("m.csv"));
  const auto back = load_model(dir.file("m.csv"));
  EXPECT_EQ(back.nu, 0.3);
  EXPECT_EQ(back.cost, 2.0);
  EXPECT_EQ(back.box, BoxConvention::libsvm);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.epsilon_star, m.epsilon_star);
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.active_features, m.active_features);
  EXPECT_EQ(back.input_dim, 5u);
  EXPECT_EQ(predict_rows(back, prob.x), predict_rows(m, prob.x));
}

TEST(ModelFile, RejectsMalformed) {
  iqe::testing::TempDir dir;
  iqe::testing::write_bytes(dir.file("a.csv"), "[hyperparameters]\nnu,0.5\n");
  EXPECT_THROW(load_model(dir.file("a.csv")), IoError);
  iqe::testing::write_bytes(dir.file("b.csv"), "[hyperparameters]\nbogus,1\n");
  EXPECT_THROW(load_model(dir.file("b.csv")), IoError);
  EXPECT_THROW(load_model(dir.file("missing.csv")), IoError);
  EXPECT_THROW(parse_box_convention("sklearn"), ConfigError);
}
