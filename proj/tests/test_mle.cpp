#include <gtest/gtest.h>

#include "oracles.hpp"
#include "postsel/mle.hpp"

using namespace postsel;

namespace {

Matrix random_spd(int m, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> norm;
  Matrix a(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) a(i, j) = norm(gen);
  return a * a.transpose() / m + 0.3 * Matrix::Identity(m, m);
}

Vector selected_draw(const AggregateTest& test, const Vector& mu, const Matrix& sigma, std::uint64_t seed) {
  oracle::Mvn mvn(mu, sigma, seed);
  for (;;) {
    Vector x = mvn.draw();
    if (is_selected(test, test_statistic(test, x))) return x;
  }
}

// Wald objective written with Boost's noncentral chi-square, independent of the library kernel.
double wald_objective(double lam, double q, double thr, double m) {
  const double sf = lam == 0.0 ? oracle::chisq_upper(thr, m)
                               : boost::math::cdf(boost::math::complement(
                                     boost::math::non_central_chi_squared_distribution<double>(m, lam * lam * q), thr));
  return -0.5 * (1.0 - lam) * (1.0 - lam) * q - std::log(sf);
}

}  // namespace

TEST(WaldLineSearch, UntruncatedIsIdentity) {
  const auto stats = SummaryStats::make((Vector(3) << 0.5, -1.0, 2.0).finished(), random_spd(3, 1));
  const auto r = mle_wald_linesearch(stats, make_wald_test(stats, 1.0));
  EXPECT_NEAR(r.shrinkage, 1.0, 1e-6);
  EXPECT_LE((r.beta_tilde - stats.beta_hat).cwiseAbs().maxCoeff(), 1e-6 * stats.beta_hat.cwiseAbs().maxCoeff());
}

TEST(WaldLineSearch, OneDimensionalGridOracle) {
  const auto stats = SummaryStats::make(Vector::Constant(1, 3.5), Matrix::Identity(1, 1));
  const auto test = make_wald_test(stats, 0.001);
  const auto r = mle_wald_linesearch(stats, test);
  const double thr = test.quadratic().threshold;
  const double best = oracle::grid_argmax([&](double l) { return wald_objective(l, 12.25, thr, 1.0); }, 0.0, 1.0, 100001);
  EXPECT_NEAR(r.shrinkage, best, 1e-4);
  EXPECT_NEAR(r.beta_tilde(0), r.shrinkage * 3.5, 1e-15);
}

TEST(WaldLineSearch, CommonShrinkageAndObjectiveAudit) {
  for (int rep = 0; rep < 200; ++rep) {
    const int m = 1 + rep % 6;
    const Matrix sigma = random_spd(m, 10 + rep);
    const auto test = make_wald_test(SummaryStats::make(Vector::Zero(m), sigma), 0.01);
    const Vector mu = Vector::Constant(m, 0.3 * (rep % 4));
    const auto stats = SummaryStats::make(selected_draw(test, mu, sigma, rep), sigma);
    const auto r = mle_wald_linesearch(stats, test);
    ASSERT_GE(r.shrinkage, 0.0);
    ASSERT_LE(r.shrinkage, 1.0);
    ASSERT_EQ(r.beta_tilde, r.shrinkage * stats.beta_hat);
    EXPECT_LE(r.beta_tilde.norm(), stats.beta_hat.norm());
    const double q = test_statistic(test, stats.beta_hat), thr = test.quadratic().threshold;
    const double g_hat = wald_objective(r.shrinkage, q, thr, m);
    EXPECT_GE(g_hat, wald_objective(0.0, q, thr, m) - 1e-9);
    EXPECT_GE(g_hat, wald_objective(1.0, q, thr, m) - 1e-9);
    EXPECT_GE(r.penalty, 0.0);
  }
}

TEST(WaldLineSearch, RejectsUnselectedData) {
  const auto stats = SummaryStats::make(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(mle_wald_linesearch(stats, make_wald_test(stats, 0.01)), NotSelected);
}

TEST(SgdMle, AgreesWithLineSearchForWald) {
  const Matrix sigma = random_spd(3, 2);
  const auto test = make_wald_test(SummaryStats::make(Vector::Zero(3), sigma), 0.01);
  const auto stats = SummaryStats::make(selected_draw(test, Vector::Constant(3, 0.5), sigma, 3), sigma);
  const auto exact = mle_wald_linesearch(stats, test);
  const auto sgd = mle_general_sgd(stats, test);
  EXPECT_LE((sgd.beta_tilde - exact.beta_tilde).cwiseAbs().maxCoeff(), 0.05 * stats.se.maxCoeff());
  EXPECT_TRUE(sgd.converged);
}

TEST(SgdMle, UntruncatedConvergesToEstimate) {
  const Matrix sigma = random_spd(3, 4);
  const auto stats = SummaryStats::make((Vector(3) << 1.0, -0.5, 0.2).finished(), sigma);
  const auto sgd = mle_general_sgd(stats, make_wald_test(stats, 1.0));
  EXPECT_LE((sgd.beta_tilde - stats.beta_hat).cwiseAbs().maxCoeff(), 0.05 * stats.se.maxCoeff());
}

TEST(SgdMle, StationarityAtGeneralQuadratic) {
  const Matrix sigma = random_spd(3, 5);
  const Matrix k = random_spd(3, 6);
  const auto test = make_quadratic_test(k, SummaryStats::make(Vector::Zero(3), sigma), 0.02);
  const auto stats = SummaryStats::make(selected_draw(test, Vector::Zero(3), sigma, 7), sigma);
  const auto r = mle_general_sgd(stats, test);
  // Oracle: the conditional mean at the estimate, from brute-force rejection draws.
  oracle::Mvn mvn(r.beta_tilde, sigma, 8);
  const long n = 20000;
  Vector sum = Vector::Zero(3), sum2 = Vector::Zero(3);
  for (long kept = 0; kept < n;) {
    const Vector x = mvn.draw();
    if (!is_selected(test, test_statistic(test, x))) continue;
    ++kept;
    sum += x;
    sum2 += x.cwiseAbs2();
  }
  const Vector mean = sum / n;
  for (int j = 0; j < 3; ++j) {
    const double se = std::sqrt((sum2(j) / n - mean(j) * mean(j)) / n);
    EXPECT_NEAR(mean(j), stats.beta_hat(j), 4.0 * se) << j;
  }
  EXPECT_LE(r.stationarity, 4.0);
}

TEST(SgdMle, RejectsTinyBudget) {
  const auto stats = SummaryStats::make(Vector::Constant(1, 4.0), Matrix::Identity(1, 1));
  SgdOptions opt;
  opt.steps = 10;
  EXPECT_THROW(mle_general_sgd(stats, make_wald_test(stats, 0.01), opt), InvalidInput);
}

TEST(LinearMle, UntruncatedAndGridOracle) {
  const Matrix sigma = random_spd(2, 9);
  const auto stats = SummaryStats::make((Vector(2) << 1.0, 2.0).finished(), sigma);
  const auto open = mle_linear_test(stats, make_linear_test(Vector::Ones(2), stats, LinearSpec::symmetric(1.0)));
  EXPECT_DOUBLE_EQ(open.shrinkage, 3.0);
  EXPECT_EQ(open.beta_tilde, stats.beta_hat);

  const auto s1 = SummaryStats::make(Vector::Constant(1, 2.4), Matrix::Constant(1, 1, 0.64));
  const auto test = make_linear_test(Vector::Ones(1), s1, LinearSpec::symmetric(0.05));
  const auto r = mle_linear_test(s1, test);
  const double sd = 0.8, u = test.linear().u;
  auto h = [&](double d) {
    const double sel = oracle::upper_normal((u - d) / sd) + oracle::upper_normal((u + d) / sd);
    return -0.5 * (d - 2.4) * (d - 2.4) / (sd * sd) - std::log(sel);
  };
  EXPECT_NEAR(r.shrinkage, oracle::grid_argmax(h, 2.4 - 6 * sd, 2.4 + 6 * sd, 200001), 1e-4 * sd);
}

TEST(LinearMle, CoordinatesCanMoveInOppositeDirections) {
  Matrix sigma(2, 2);
  sigma << 1.0, -0.6, -0.6, 1.0;
  const auto stats = SummaryStats::make((Vector(2) << 3.0, 1.0).finished(), sigma);
  const Vector a = (Vector(2) << 1.0, 0.2).finished();
  const auto r = mle_linear_test(stats, make_linear_test(a, stats, LinearSpec::symmetric(0.05)));
  EXPECT_LT(std::abs(r.beta_tilde(0)), std::abs(stats.beta_hat(0)));  // shrunk
  EXPECT_GT(std::abs(r.beta_tilde(1)), std::abs(stats.beta_hat(1)));  // inflated
  // The estimate lies on the line beta_hat + t Sigma a.
  const Vector step = r.beta_tilde - stats.beta_hat, dir = sigma * a;
  EXPECT_NEAR(step(0) * dir(1) - step(1) * dir(0), 0.0, 1e-12);
}

TEST(MleConsistency, ErrorDecreasesWithSampleSize) {
  const Vector beta = (Vector(3) << 0.05, 0.0, -0.03).finished();
  std::vector<double> medians;
  for (double n : {5000.0, 20000.0}) {
    // Gaussian design with unit variance: Sigma = (X'X)^{-1} = I / n.
    const Matrix sigma = Matrix::Identity(3, 3) / n;
    const auto test = make_wald_test(SummaryStats::make(Vector::Zero(3), sigma), 0.001);
    std::vector<double> err;
    for (int rep = 0; rep < 200; ++rep) {
      const auto stats = SummaryStats::make(selected_draw(test, beta, sigma, 1000 * rep + static_cast<int>(n)), sigma);
      err.push_back((mle_wald_linesearch(stats, test).beta_tilde - beta).cwiseAbs().maxCoeff());
    }
    std::nth_element(err.begin(), err.begin() + 100, err.end());
    medians.push_back(err[100]);
  }
  EXPECT_LT(medians[1], medians[0]);
}

TEST(GlmSampler, UntruncatedMatchesUnconditionalMean) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> norm;
  const int n = 200, m = 3;
  GlmModel model;
  model.X.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) model.X(i, j) = norm(gen);
  const Vector beta = (Vector(3) << 0.2, -0.1, 0.0).finished();
  Vector y0 = model.X * beta;
  for (int i = 0; i < n; ++i) y0(i) += norm(gen);
  const auto sel = glm_wald_selection(model, 1.0);
  const Index sweeps = 4000;
  const Matrix ys = glm_exact_sampler(model, sel, beta, y0, sweeps, 12);
  const Matrix t = ys * model.X;  // rows T(y)'
  const Vector mean = t.colwise().mean().transpose();
  const Vector expected = model.X.transpose() * model.X * beta;
  const Vector sd = (model.X.transpose() * model.X).diagonal().cwiseSqrt();
  for (int j = 0; j < m; ++j) EXPECT_NEAR(mean(j), expected(j), 3.0 * sd(j) / std::sqrt(double(sweeps))) << j;
}

TEST(GlmSampler, EveryStateSelectedAndMatchesSummaryPath) {
  std::mt19937_64 gen(13);
  std::normal_distribution<double> norm;
  const int n = 500, m = 3;
  GlmModel model;
  model.X.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) model.X(i, j) = norm(gen);
  const Vector beta = Vector::Constant(3, 0.06);
  const auto sel = glm_wald_selection(model, 0.01);
  Vector y;
  for (;;) {
    y = model.X * beta;
    for (int i = 0; i < n; ++i) y(i) += norm(gen);
    if (sel.statistic(model.X.transpose() * y) > sel.threshold) break;
  }
  const Matrix ys = glm_exact_sampler(model, sel, Vector::Zero(3), y, 500, 14);
  for (Index r = 0; r < ys.rows(); ++r)
    ASSERT_GT(sel.statistic(model.X.transpose() * ys.row(r).transpose()), sel.threshold);

  const Matrix xtx = model.X.transpose() * model.X;
  const Matrix sigma = xtx.inverse();
  const auto stats = SummaryStats::make(sigma * model.X.transpose() * y, sigma);
  const auto exact = mle_wald_linesearch(stats, make_wald_test(stats, 0.01));
  const auto glm = glm_conditional_mle(model, sel, y, stats.beta_hat);
  for (int j = 0; j < m; ++j) EXPECT_NEAR(glm.beta_tilde(j), exact.beta_tilde(j), 0.1 * stats.se(j)) << j;
}
