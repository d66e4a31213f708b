#include <gtest/gtest.h>

#include "oracles.hpp"
#include "postsel/kernels.hpp"

using namespace postsel;

TEST(NormalTail, SymmetryAndKnownValues) {
  EXPECT_DOUBLE_EQ(normal_tail(0.0), 0.5);
  for (double z : {0.1, 1.0, 2.5, 7.0, 12.0}) EXPECT_NEAR(normal_tail(z) + normal_tail(-z), 1.0, 1e-15);
  EXPECT_NEAR(normal_tail(3.2905), 5.0e-4, 1e-7);
}

TEST(NormalTail, RelativeAccuracyAgainstErfc) {
  for (double z = -8.0; z <= 37.0; z += 0.37) {
    const double ref = oracle::upper_normal(z);
    EXPECT_NEAR(normal_tail(z) / ref, 1.0, 1e-12) << "z=" << z;
  }
}

TEST(NormalTail, MonotoneDecreasing) {
  double prev = 1.0;
  for (double z = -10.0; z <= 38.0; z += 0.01) {
    const double v = normal_tail(z);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(NormalQuantile, InvertsTail) {
  for (double q : {0.5, 0.1, 1e-3, 1e-8, 1e-30, 1e-200})
    EXPECT_NEAR(normal_tail(normal_upper_quantile(q)) / q, 1.0, 1e-10);
  EXPECT_NEAR(normal_upper_quantile_log(std::log(1e-300)), normal_upper_quantile(1e-300), 1e-9);
}

TEST(TruncNorm, IdentityAndSymmetry) {
  EXPECT_NEAR(truncnorm_cdf(0.0, 0.0, 1.0, TruncationRegion::full_line()), 0.5, 1e-15);
  for (double a : {0.3, 1.0, 3.2905, 9.0, 20.0})
    EXPECT_NEAR(truncnorm_cdf(a, 0.0, 1.0, TruncationRegion::exterior(-a, a)), 0.5, 1e-12) << a;
}

TEST(TruncNorm, ErfcRatioOracle) {
  const auto r = TruncationRegion::exterior(-3.2905, 3.2905);
  const double expected = 1.0 - oracle::upper_normal(3.5) / (2.0 * oracle::upper_normal(3.2905));
  EXPECT_NEAR(truncnorm_cdf(3.5, 0.0, 1.0, r), expected, 1e-12);
  EXPECT_NEAR(truncnorm_cdf(3.5, 0.0, 1.0, r), 0.767, 5e-4);
}

TEST(TruncNorm, ProperCdfForEveryRegionKind) {
  const std::vector<TruncationRegion> regions{TruncationRegion::full_line(), TruncationRegion::lower_ray(1.0),
                                              TruncationRegion::upper_ray(-0.5), TruncationRegion::interval(-1.0, 2.0),
                                              TruncationRegion::exterior(-2.0, 1.5)};
  for (const auto& r : regions) {
    for (double mu : {-3.0, 0.0, 2.0}) {
      EXPECT_NEAR(truncnorm_cdf(-1e6, mu, 2.0, r), 0.0, 1e-15);
      EXPECT_NEAR(truncnorm_cdf(1e6, mu, 2.0, r), 1.0, 1e-15);
      double prev = 0.0;
      for (double x = -10.0; x <= 10.0; x += 0.05) {
        const double v = truncnorm_cdf(x, mu, 2.0, r);
        EXPECT_GE(v, prev - 1e-15);
        prev = v;
      }
    }
  }
}

TEST(TruncNorm, StrictlyDecreasingInMeanInsideRegion) {
  const auto r = TruncationRegion::exterior(-1.0, 1.0);
  for (double x : {-3.0, -1.5, 1.2, 4.0}) {
    // Compare on whichever side of 1/2 carries the precision.
    double prev_cdf = 2.0, prev_sf = -1.0;
    for (double mu = -6.0; mu <= 6.0; mu += 0.25) {
      const double f = truncnorm_cdf(x, mu, 1.0, r), s = truncnorm_sf(x, mu, 1.0, r);
      if (f < 0.5) {
        EXPECT_LT(f, prev_cdf) << "x=" << x << " mu=" << mu;
      } else {
        EXPECT_GT(s, prev_sf) << "x=" << x << " mu=" << mu;
      }
      prev_cdf = f;
      prev_sf = s;
    }
  }
}

TEST(TruncNorm, FarTailStaysAccurate) {
  // Region and observation 40 standard deviations out, where erfc underflows.
  // Oracle: Q(z) = phi(z)/z * S(z) with the asymptotic series S(z) = 1 - z^-2 + 3 z^-4 - 15 z^-6.
  auto series = [](double z) { return 1.0 - 1.0 / (z * z) + 3.0 / std::pow(z, 4) - 15.0 / std::pow(z, 6); };
  const auto r = TruncationRegion::exterior(-40.0, 40.0);
  const double expected = 0.5 * std::exp(-0.5 * (40.5 * 40.5 - 1600.0)) * (40.0 / 40.5) * series(40.5) / series(40.0);
  EXPECT_NEAR(truncnorm_sf(40.5, 0.0, 1.0, r) / expected, 1.0, 1e-9);
}

TEST(TruncNorm, QuantileTieAndFullLine) {
  const double a = 3.2905;
  EXPECT_NEAR(truncnorm_quantile(0.5, 0.0, 1.0, TruncationRegion::exterior(-a, a)), -a, 1e-9);
  EXPECT_NEAR(truncnorm_quantile(0.5, 1.7, 4.0, TruncationRegion::full_line()), 1.7, 1e-10);
}

TEST(TruncNorm, QuantileRoundTripRandomCases) {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    const double b = -3.0 + 4.0 * u(gen), a = b + 0.1 + 3.0 * u(gen);
    const std::vector<TruncationRegion> regions{TruncationRegion::exterior(b, a), TruncationRegion::interval(b, a),
                                                TruncationRegion::lower_ray(b), TruncationRegion::upper_ray(a)};
    const double mu = -2.0 + 4.0 * u(gen), s2 = 0.2 + 3.0 * u(gen);
    const double p = 0.001 + 0.998 * u(gen);
    for (const auto& r : regions) {
      const double x = truncnorm_quantile(p, mu, s2, r);
      EXPECT_TRUE(r.contains(x, 1e-9));
      EXPECT_NEAR(truncnorm_cdf(x, mu, s2, r), p, 1e-8);
    }
  }
}

TEST(TruncNorm, DegenerateRegionThrows) {
  EXPECT_THROW(truncnorm_cdf(0.0, 0.0, 1.0, TruncationRegion::interval(1e4, 1e4 + 1e-300)), Error);
}

TEST(TruncNorm, SamplerMatchesTwoSidedMomentOracle) {
  Rng gen(11);
  const double c = 3.0;
  const auto r = TruncationRegion::exterior(-c, c);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_truncnorm(0.0, 1.0, r, gen);
    ASSERT_TRUE(r.contains(x));
    s += std::abs(x);
    s2 += x * x;
  }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(mean, oracle::abs_moment_two_sided(c), 3.0 * sd / std::sqrt(double(n)));
}

TEST(ChiSquare, SurvivalAgainstBoost) {
  for (double dof : {1.0, 5.0, 50.0})
    for (double y : {0.5, 3.0, 10.8276, 40.0, 86.66})
      EXPECT_NEAR(chisq_sf(y, dof), oracle::chisq_upper(y, dof), 1e-13);
}

TEST(QuadForm, ChiSquareCases) {
  QuadFormSpec one{Vector::Ones(1), {}};
  EXPECT_NEAR(quadform_survival(10.8276, one), 0.001, 1e-6);
  for (int m : {1, 5, 50}) {
    QuadFormSpec spec{Vector::Ones(m), {}};
    for (double y : {0.2 * m, 1.0 * m, 2.0 * m})
      EXPECT_NEAR(quadform_survival(y, spec), oracle::chisq_upper(y, m), 1e-8) << m << " " << y;
  }
  QuadFormSpec fifty{Vector::Ones(50), {}};
  EXPECT_NEAR(quadform_survival(oracle::chisq_upper_quantile(0.001, 50), fifty), 0.001, 1e-9);
}

TEST(QuadForm, ScaleEquivariance) {
  QuadFormSpec base{(Vector(3) << 0.5, 1.0, 2.5).finished(), {}};
  QuadFormSpec scaled{base.weights * 7.0, {}};
  EXPECT_NEAR(quadform_survival(4.0, base), quadform_survival(28.0, scaled), 1e-11);
  EXPECT_NEAR(quadform_quantile(0.01, scaled), 7.0 * quadform_quantile(0.01, base), 1e-7 * quadform_quantile(0.01, scaled));
}

TEST(QuadForm, QuantileCases) {
  QuadFormSpec one{Vector::Ones(1), {}};
  EXPECT_NEAR(quadform_quantile(0.001, one), 10.8276, 1e-4);
  EXPECT_NEAR(quadform_quantile(0.001, one), oracle::chisq_upper_quantile(0.001, 1), 1e-7);
  EXPECT_EQ(quadform_quantile(1.0, one), 0.0);
  QuadFormSpec mixed{(Vector(4) << 0.1, 0.7, 1.3, 4.0).finished(), {}};
  double prev = kInf;
  for (double t : {0.001, 0.01, 0.1, 0.5, 0.9}) {
    const double q = quadform_quantile(t, mixed);
    EXPECT_LT(q, prev);
    EXPECT_NEAR(quadform_survival(q, mixed), t, 1e-8 * std::max(t, 1e-3) + 1e-11);
    prev = q;
  }
}

TEST(QuadForm, NoncentralAgainstBoost) {
  // Equal weights with noncentrality: noncentral chi-square with ncp = sum delta^2.
  QuadFormSpec spec{Vector::Ones(4), (Vector(4) << 1.0, -0.5, 2.0, 0.0).finished()};
  const double ncp = spec.noncentrality.squaredNorm();
  for (double y : {1.0, 6.0, 15.0, 30.0}) EXPECT_NEAR(quadform_survival(y, spec), chisq_sf(y, 4.0, ncp), 1e-10);
}

TEST(QuadForm, ImhofAgreesWithMonteCarloOnRandomSpecs) {
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int failures = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 1 + static_cast<int>(u(gen) * 6);
    std::vector<double> w(m), d(m);
    Vector wv(m), dv(m);
    for (int i = 0; i < m; ++i) {
      w[i] = wv(i) = 0.05 + 3.0 * u(gen);
      d[i] = dv(i) = rep % 2 ? 2.0 * u(gen) - 1.0 : 0.0;
    }
    const QuadFormSpec spec{wv, rep % 2 ? dv : Vector()};
    const double s = spec.weights.sum() * (0.5 + 2.0 * u(gen));
    const auto mc = oracle::mc_quadform_survival(w, rep % 2 ? d : std::vector<double>{}, s, 400000, 100 + rep);
    const double v = quadform_survival(s, spec);
    failures += std::abs(v - mc.value) > 4.0 * mc.se;
  }
  EXPECT_EQ(failures, 0);
}

TEST(QuadForm, LibraryMonteCarloFallbackAgrees) {
  QuadFormSpec spec{(Vector(3) << 0.3, 1.0, 2.0).finished(), {}};
  const auto mc = quadform_survival_mc(5.0, spec, 200000, 3);
  EXPECT_NEAR(mc.value, quadform_survival(5.0, spec), 4.0 * mc.se);
}

TEST(Mvn, MomentsEmptyAndDeterminism) {
  const int n = 40000;
  const Matrix draws = mvn_sample(Vector::Zero(3), Matrix::Identity(3, 3), n, 5);
  ASSERT_EQ(draws.rows(), n);
  const Matrix cov = draws.transpose() * draws / double(n);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(cov(i, j), i == j ? 1.0 : 0.0, 3.0 * (i == j ? std::sqrt(2.0) : 1.0) / std::sqrt(double(n)));
  EXPECT_EQ(mvn_sample(Vector::Zero(3), Matrix::Identity(3, 3), 0, 5).rows(), 0);
  const Matrix again = mvn_sample(Vector::Zero(3), Matrix::Identity(3, 3), n, 5);
  EXPECT_TRUE((again.array() == draws.array()).all());
}

TEST(Mvn, RejectsIndefiniteCovariance) {
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // eigenvalue -1
  try {
    mvn_sample(Vector::Zero(2), bad, 10, 1);
    FAIL() << "expected an error";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("-1"), std::string::npos) << e.what();
  }
}

TEST(Mvn, ClampsTinyNegativeEigenvalues) {
  Matrix nearly(2, 2);
  nearly << 1.0, 1.0, 1.0, 1.0 - 1e-14;
  EXPECT_NO_THROW(mvn_sample(Vector::Zero(2), nearly, 10, 1));
}

TEST(EigWeights, WaldAndDiagonalCases) {
  Matrix a = Matrix::Random(4, 4);
  Matrix sigma = a * a.transpose() + Matrix::Identity(4, 4);
  const auto wald = eig_weights(sigma.inverse(), sigma);
  ASSERT_EQ(wald.size(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(wald.weights(i), 1.0, 1e-10);
  const Vector d = (Vector(3) << 0.5, 2.0, 3.0).finished();
  const auto diag = eig_weights(Matrix::Identity(3, 3), d.asDiagonal());
  std::vector<double> got(diag.weights.data(), diag.weights.data() + 3);
  std::sort(got.begin(), got.end());
  EXPECT_NEAR(got[0], 0.5, 1e-12);
  EXPECT_NEAR(got[1], 2.0, 1e-12);
  EXPECT_NEAR(got[2], 3.0, 1e-12);
  EXPECT_THROW(eig_weights(Matrix::Identity(3, 3), Matrix::Identity(4, 4)), InvalidInput);
}

TEST(EigWeights, AlternativeLawMatchesMonteCarlo) {
  std::mt19937_64 gen(99);
  Matrix a = Matrix::Random(5, 5), b = Matrix::Random(5, 5);
  const Matrix sigma = a * a.transpose() + 0.5 * Matrix::Identity(5, 5);
  const Matrix k = b * b.transpose();
  const Vector mu = Vector::Random(5);
  const auto spec = eig_weights(k, sigma, mu);
  const double s = 2.0 * (k * sigma).trace();
  oracle::Mvn mvn(mu, sigma, 17);
  const long n = 400000;
  long hits = 0;
  for (long r = 0; r < n; ++r) {
    const Vector x = mvn.draw();
    hits += x.dot(k * x) > s;
  }
  const double p = double(hits) / n, se = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(quadform_survival(s, spec), p, 3.0 * se);
}

TEST(MonotoneRoot, FindsRootsBothDirections) {
  EXPECT_NEAR(monotone_root([](double x) { return x * x * x - 8.0; }, true, 0.0, 0.5, 1e-12), 2.0, 1e-10);
  EXPECT_NEAR(monotone_root([](double x) { return 3.0 - x; }, false, 100.0, 1.0, 1e-12), 3.0, 1e-10);
}
