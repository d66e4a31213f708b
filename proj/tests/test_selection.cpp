#include <gtest/gtest.h>

#include "oracles.hpp"
#include "postsel/selection.hpp"

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

}  // namespace

TEST(SummaryStats, ValidatesInput) {
  EXPECT_THROW(SummaryStats::make(Vector::Zero(2), Matrix::Identity(3, 3)), InvalidInput);
  EXPECT_THROW(SummaryStats::make(Vector(), Matrix()), InvalidInput);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 3.0, 3.0, 1.0;
  EXPECT_THROW(SummaryStats::make(Vector::Zero(2), indefinite), InvalidInput);
  Matrix zero_var = Matrix::Identity(2, 2);
  zero_var(1, 1) = 0.0;
  EXPECT_THROW(SummaryStats::make(Vector::Zero(2), zero_var), InvalidInput);
  const auto s = SummaryStats::make((Vector(2) << 1.0, 2.0).finished(), (Vector(2) << 4.0, 9.0).finished().asDiagonal());
  EXPECT_DOUBLE_EQ(s.se(0), 2.0);
  EXPECT_DOUBLE_EQ(s.se(1), 3.0);
}

TEST(QuadraticTestBuild, WaldThresholds) {
  const auto s50 = SummaryStats::make(Vector::Zero(50), random_spd(50, 1));
  const auto t50 = make_wald_test(s50, 0.001);
  EXPECT_TRUE(t50.quadratic().wald);
  EXPECT_NEAR(t50.quadratic().threshold, oracle::chisq_upper_quantile(0.001, 50), 1e-8);
  const auto s1 = SummaryStats::make(Vector::Zero(1), Matrix::Identity(1, 1));
  EXPECT_NEAR(make_wald_test(s1, 0.001).quadratic().threshold, 10.8276, 1e-4);
  EXPECT_EQ(make_wald_test(s1, 1.0).quadratic().threshold, 0.0);
}

TEST(QuadraticTestBuild, NonWaldThresholdMatchesNullLaw) {
  const Matrix sigma = random_spd(4, 2);
  const auto s = SummaryStats::make(Vector::Zero(4), sigma);
  const Matrix k = Matrix::Identity(4, 4);
  const auto t = make_quadratic_test(k, s, 0.01);
  EXPECT_FALSE(t.quadratic().wald);
  EXPECT_NEAR(quadform_survival(t.quadratic().threshold, eig_weights(k, sigma)), 0.01, 1e-9);
}

TEST(QuadraticTestBuild, RejectsBadInput) {
  const auto s = SummaryStats::make(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(make_quadratic_test(Matrix::Identity(3, 3), s, 0.01), InvalidInput);
  Matrix neg = -Matrix::Identity(2, 2);
  EXPECT_THROW(make_quadratic_test(neg, s, 0.01), InvalidInput);
  EXPECT_THROW(make_quadratic_test(Matrix::Identity(2, 2), s, 0.0), InvalidInput);
}

TEST(LinearTestBuild, SymmetricOneSidedExplicit) {
  const auto s = SummaryStats::make(Vector::Zero(4), Matrix::Identity(4, 4));
  const Vector a = Vector::Ones(4);
  const auto sym = make_linear_test(a, s, LinearSpec::symmetric(0.05)).linear();
  EXPECT_NEAR(sym.u, oracle::normal_upper_quantile(0.025) * 2.0, 1e-10);
  EXPECT_NEAR(sym.u, 3.92, 1e-3);
  EXPECT_DOUBLE_EQ(sym.l, -sym.u);
  const auto one = make_linear_test(a, s, LinearSpec::one_sided(0.001)).linear();
  EXPECT_EQ(one.l, -kInf);
  EXPECT_NEAR(one.u, 3.0902 * 2.0, 1e-3);
  EXPECT_NEAR(one.u, oracle::normal_upper_quantile(0.001) * 2.0, 1e-10);
  const auto ex = make_linear_test(a, s, LinearSpec::bounds(-10.0, 1.0)).linear();
  EXPECT_EQ(ex.l, -10.0);
  EXPECT_EQ(ex.u, 1.0);
  EXPECT_TRUE(std::isnan(ex.t1));
  EXPECT_THROW(make_linear_test(a, s, LinearSpec::bounds(1.0, 1.0)), InvalidInput);
  EXPECT_THROW(make_linear_test(Vector::Zero(4), s, LinearSpec::symmetric(0.05)), InvalidInput);
  EXPECT_TRUE(make_linear_test(a, s, LinearSpec::symmetric(1.0)).linear().untruncated());
}

TEST(Evaluate, Examples) {
  const auto zero = SummaryStats::make(Vector::Zero(3), Matrix::Identity(3, 3));
  const auto e0 = evaluate(make_wald_test(zero, 0.05), zero);
  EXPECT_EQ(e0.statistic, 0.0);
  EXPECT_FALSE(e0.selected);
  const auto one = SummaryStats::make(Vector::Constant(1, 3.5), Matrix::Identity(1, 1));
  const auto e1 = evaluate(make_quadratic_test(Matrix::Identity(1, 1), one, 0.001), one);
  EXPECT_DOUBLE_EQ(e1.statistic, 12.25);
  EXPECT_TRUE(e1.selected);
  // Boundary convention: a'beta_hat exactly at l is not selected.
  const auto two = SummaryStats::make(Vector::Zero(2), Matrix::Identity(2, 2));
  const auto lin = make_linear_test(Vector::Ones(2), two, LinearSpec::bounds(-2.0, 2.0));
  EXPECT_FALSE(is_selected(lin, -2.0));
  EXPECT_TRUE(is_selected(lin, -2.0 - 1e-12));
  EXPECT_TRUE(make_wald_test(zero, 1.0).quadratic().threshold == 0.0);
  EXPECT_TRUE(evaluate(make_linear_test(Vector::Ones(3), zero, LinearSpec::symmetric(1.0)), zero).selected);
}

TEST(Evaluate, WaldDecisionMatchesEigenRepresentation) {
  const Matrix sigma = random_spd(5, 3);
  oracle::Mvn mvn(Vector::Zero(5), sigma, 4);
  const Matrix sinv = sigma.inverse();
  const auto stats0 = SummaryStats::make(Vector::Zero(5), sigma);
  const auto test = make_wald_test(stats0, 0.2);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  for (int r = 0; r < 2000; ++r) {
    const Vector x = mvn.draw();
    // sum_i (v_i'x)^2 / lambda_i equals x' Sigma^{-1} x.
    const Vector proj = es.eigenvectors().transpose() * x;
    const double via_eigen = proj.cwiseAbs2().cwiseQuotient(es.eigenvalues()).sum();
    const double direct = x.dot(sinv * x);
    const bool sel = is_selected(test, test_statistic(test, x));
    if (std::abs(via_eigen - test.quadratic().threshold) > 1e-8) {
      EXPECT_EQ(sel, via_eigen > test.quadratic().threshold);
    }
    EXPECT_NEAR(via_eigen, direct, 1e-8 * std::max(1.0, direct));
  }
}

TEST(SelectionFrequency, MatchesT1UnderNull) {
  for (int m : {1, 5, 50}) {
    const Matrix sigma = random_spd(m, 10 + m);
    const auto stats = SummaryStats::make(Vector::Zero(m), sigma);
    const double t1 = 0.05;
    const std::vector<AggregateTest> tests{make_wald_test(stats, t1), make_quadratic_test(Matrix::Identity(m, m), stats, t1),
                                           make_linear_test(Vector::Ones(m), stats, LinearSpec::symmetric(t1)),
                                           make_linear_test(Vector::Ones(m), stats, LinearSpec::one_sided(t1))};
    for (std::size_t ti = 0; ti < tests.size(); ++ti) {
      oracle::Mvn mvn(Vector::Zero(m), sigma, 100 * m + ti);
      const long n = 40000;
      long hits = 0;
      for (long r = 0; r < n; ++r) hits += is_selected(tests[ti], test_statistic(tests[ti], mvn.draw()));
      const double se = std::sqrt(t1 * (1 - t1) / n);
      EXPECT_NEAR(double(hits) / n, t1, 3.0 * se) << "m=" << m << " test=" << ti;
    }
  }
}

TEST(SelectionProbability, NullAndAlternative) {
  const Matrix sigma = random_spd(3, 7);
  const auto stats = SummaryStats::make(Vector::Zero(3), sigma);
  const auto wald = make_wald_test(stats, 0.01);
  EXPECT_NEAR(selection_probability(wald, sigma, Vector::Zero(3)), 0.01, 1e-10);
  const Vector mu = (Vector(3) << 1.0, -0.5, 2.0).finished();
  EXPECT_NEAR(selection_probability(wald, sigma, mu), chisq_sf(wald.quadratic().threshold, 3, mu.dot(sigma.inverse() * mu)), 1e-12);
  const auto lin = make_linear_test(Vector::Ones(3), stats, LinearSpec::bounds(-1.0, 3.0));
  const double sd = std::sqrt(Vector::Ones(3).dot(sigma * Vector::Ones(3)));
  EXPECT_NEAR(null_selection_probability(lin, sigma), 1.0 - oracle::upper_normal(-1.0 / sd) + oracle::upper_normal(3.0 / sd), 1e-12);
  EXPECT_NEAR(aggregate_pvalue(wald, sigma, 11.3449), oracle::chisq_upper(11.3449, 3), 1e-12);
}
