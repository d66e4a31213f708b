#include <gtest/gtest.h>

#include "oracles.hpp"
#include "postsel/simulate.hpp"

using namespace postsel;

namespace {

double corr(const Vector& a, const Vector& b) {
  const Vector ac = a.array() - a.mean(), bc = b.array() - b.mean();
  return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

double mean_adjacent_corr(const Matrix& x) {
  double sum = 0.0;
  int count = 0;
  for (Index j = 0; j + 1 < x.cols(); ++j) {
    if (x.col(j).squaredNorm() == 0.0 || x.col(j + 1).squaredNorm() == 0.0) continue;
    const double c = corr(x.col(j), x.col(j + 1));
    if (std::isfinite(c)) {
      sum += c;
      ++count;
    }
  }
  return sum / count;
}

StudyConfig tiny_study() {
  StudyConfig c = preset("smoke");
  c.n = {300};
  c.m = {3};
  c.snr = {0.0};
  c.replicates = 30;
  return c;
}

}  // namespace

TEST(Design, GenotypeLikeEntries) {
  const Matrix x = gen_rare_variant_design(20000, 30, 1);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      ASSERT_TRUE(v == 0.0 || v == 1.0 || v == 2.0);
    }
  // Allele frequencies are rare: each column mean is 2 g with g in [2e-4, 0.1].
  for (Index j = 0; j < x.cols(); ++j) {
    const double g = x.col(j).mean() / 2.0;
    EXPECT_LE(g, 0.1 + 4.0 * std::sqrt(0.1 / 40000.0)) << j;
  }
  EXPECT_EQ(gen_rare_variant_design(50, 4, 9), gen_rare_variant_design(50, 4, 9));
  EXPECT_THROW(gen_rare_variant_design(0, 4, 9), InvalidInput);
}

TEST(Design, LatentDependence) {
  // The AR latent structure makes neighbouring variants co-occur; the identity removes it.
  const Matrix dep = gen_rare_variant_design(40000, 20, 2, false);
  const Matrix ind = gen_rare_variant_design(40000, 20, 2, true);
  EXPECT_GT(mean_adjacent_corr(dep), 0.02);
  EXPECT_NEAR(mean_adjacent_corr(ind), 0.0, 4.0 / std::sqrt(40000.0 * 19.0));
}

TEST(Design, ObservedDesignIsUsable) {
  const Matrix x = gen_observed_design(2000, 20, 3);
  EXPECT_TRUE((x.colwise().sum().array() > 0.0).all());
  const Matrix xc = x.rowwise() - x.colwise().mean();
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(xc.transpose() * xc).eigenvalues().minCoeff(), 0.0);
}

TEST(Coefficients, SnrAndSupport) {
  const Matrix x = gen_observed_design(500, 10, 4);
  EXPECT_EQ(gen_coefficients(10, 3, 0.0, x, 5), Vector::Zero(10));
  const Vector b1 = gen_coefficients(10, 3, 1.0, x, 5);
  const Vector b2 = gen_coefficients(10, 3, 2.5, x, 5);
  EXPECT_EQ((b1.array() != 0.0).count(), 3);
  EXPECT_NEAR((x * b2).norm(), 2.5, 1e-10);
  EXPECT_LT((b2 - 2.5 * b1).norm(), 1e-12 * b2.norm());  // same direction at every snr
  EXPECT_THROW(gen_coefficients(10, 11, 1.0, x, 5), InvalidInput);
  EXPECT_THROW(gen_coefficients(10, 2, -1.0, x, 5), InvalidInput);
}

TEST(Noise, StandardizedLaws) {
  for (Noise law : {Noise::Normal, Noise::Laplace, Noise::Uniform}) {
    Rng gen(6);
    const int n = 200000;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double e = draw_noise(law, gen);
      s1 += e;
      s2 += e * e;
      s4 += e * e * e * e;
    }
    const double kurt = law == Noise::Normal ? 3.0 : law == Noise::Laplace ? 6.0 : 1.8;
    EXPECT_NEAR(s1 / n, 0.0, 5.0 / std::sqrt(n)) << to_string(law);
    EXPECT_NEAR(s2 / n, 1.0, 5.0 * std::sqrt((kurt - 1.0) / n)) << to_string(law);
    EXPECT_NEAR(s4 / n, kurt, 0.05 * kurt) << to_string(law);
  }
}

TEST(Response, NoiselessRecoversBeta) {
  const Matrix x = gen_observed_design(400, 6, 7);
  const Vector beta = gen_coefficients(6, 6, 3.0, x, 8);
  const auto d = gen_response_and_stats(x, beta, Noise::Normal, 9, 0.0);
  EXPECT_LT((d.stats.beta_hat - beta).norm(), 1e-9 * beta.norm());
  EXPECT_THROW(gen_response_and_stats(x.topRows(6), beta, Noise::Normal, 9), InvalidInput);
}

TEST(Response, StandardErrorsAreCalibrated) {
  // z-scores of a fixed design over repeated noise draws have unit variance for every noise law.
  const Matrix x = gen_observed_design(800, 4, 10);
  const Vector beta = gen_coefficients(4, 2, 1.0, x, 11);
  for (Noise law : {Noise::Normal, Noise::Laplace, Noise::Uniform}) {
    const int reps = 4000;
    double s2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const auto d = gen_response_and_stats(x, beta, law, derive_seed(12, {std::uint64_t(r)}));
      const double z = (d.stats.beta_hat(0) - beta(0)) / d.stats.se(0);
      s2 += z * z;
    }
    EXPECT_NEAR(s2 / reps, 1.0, 4.0 * std::sqrt(2.0 / reps) + 0.01) << to_string(law);
  }
}

TEST(DesignSim, SufficientStatisticsMatchFullResponses) {
  // The fast generators must reproduce the law of (beta_hat, sigma^2) from full responses.
  for (Noise law : {Noise::Normal, Noise::Laplace}) {
    StudyConfig cfg = tiny_study();
    const Cell cell{300, 3, 2, 0.1, law};
    const std::uint64_t seed = 13;
    const detail::DesignSim sim(cfg, cell, seed);
    const Matrix x = gen_observed_design(cell.n, cell.m, derive_seed(seed, {2}));
    const Vector beta = gen_coefficients(cell.m, cell.s, cell.snr * std::sqrt(double(cell.n)), x, derive_seed(seed, {3}));
    ASSERT_EQ(beta, sim.beta());
    const int reps = 3000;
    std::vector<double> fast_b, full_b, fast_v, full_v;
    Rng gen(14);
    Vector z;
    double ss;
    for (int r = 0; r < reps; ++r) {
      sim.draw(gen, z, ss);
      const auto st = sim.stats(z, ss);
      fast_b.push_back(st.beta_hat(1));
      fast_v.push_back(st.Sigma(1, 1));
      const auto d = gen_response_and_stats(x, beta, law, derive_seed(15, {std::uint64_t(r)}));
      full_b.push_back(d.stats.beta_hat(1));
      full_v.push_back(d.stats.Sigma(1, 1));
    }
    // Two-sample KS at the 0.001 level.
    const double crit = 1.95 * std::sqrt(2.0 / reps);
    EXPECT_LT(oracle::ks_two_sample(fast_b, full_b), crit) << to_string(law);
    EXPECT_LT(oracle::ks_two_sample(fast_v, full_v), crit) << to_string(law);
  }
}

TEST(DesignSim, SelectionShortcutAgreesWithTest) {
  for (TestKind kind : {TestKind::Wald, TestKind::LinearSymmetric}) {
    StudyConfig cfg = tiny_study();
    cfg.test = kind;
    const Cell cell{300, 3, 2, 0.1, Noise::Normal};
    const detail::DesignSim sim(cfg, cell, 16);
    Rng gen(17);
    Vector z;
    double ss;
    for (int r = 0; r < 2000; ++r) {
      sim.draw(gen, z, ss);
      const auto st = sim.stats(z, ss);
      const AggregateTest test = kind == TestKind::Wald
                                     ? AggregateTest(make_wald_test(st, cfg.t1))
                                     : AggregateTest(make_linear_test(sim.contrast(), st, LinearSpec::symmetric(cfg.t1)));
      const double t = test_statistic(test, st.beta_hat);
      // Skip draws within rounding of the boundary.
      const double thr = kind == TestKind::Wald ? test.quadratic().threshold : test.linear().u;
      if (std::abs(std::abs(t) - thr) < 1e-9 * thr) continue;
      EXPECT_EQ(sim.selected(z, ss, cfg), is_selected(test, t)) << r;
    }
  }
}

TEST(Study, SmokePresetRunsAndIsDeterministic) {
  StudyConfig c = preset("smoke");
  c.replicates = 20;
  c.snr = {0.1};
  const auto a = run_study(c), b = run_study(c);
  ASSERT_EQ(a.records.size(), b.records.size());
  ASSERT_FALSE(a.records.empty());
  bool saw_fdr = false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& r = a.records[i];
    EXPECT_EQ(r.method, b.records[i].method);
    EXPECT_TRUE(r.value == b.records[i].value || (std::isnan(r.value) && std::isnan(b.records[i].value)));
    EXPECT_GE(r.n_selected, c.replicates);
    EXPECT_FALSE(r.insufficient);
    if (r.metric == "fdr") {
      saw_fdr = true;
      EXPECT_GE(r.value, 0.0);
      EXPECT_LE(r.value, 1.0);
    }
  }
  EXPECT_TRUE(saw_fdr);
}

TEST(Study, ThreadCountDoesNotChangeResults) {
  StudyConfig c = tiny_study();
  const auto one = run_study(c);
  c.threads = 3;
  const auto three = run_study(c);
  ASSERT_EQ(one.records.size(), three.records.size());
  for (std::size_t i = 0; i < one.records.size(); ++i) {
    const double a = one.records[i].value, b = three.records[i].value;
    EXPECT_TRUE(a == b || (std::isnan(a) && std::isnan(b))) << one.records[i].method << " " << one.records[i].metric;
  }
}

TEST(Study, InsufficientWhenDatasetCapBinds) {
  StudyConfig c = tiny_study();
  c.t1 = 1e-6;
  c.replicates = 50;
  c.max_dataset_factor = 1e-3;
  const auto r = run_study(c);
  ASSERT_FALSE(r.records.empty());
  for (const auto& rec : r.records) EXPECT_TRUE(rec.insufficient);
}

TEST(Study, Presets) {
  for (const auto& name : preset_names()) EXPECT_EQ(preset(name).name, name);
  try {
    preset("fig9");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("fig2-desk"), std::string::npos);
  }
  EXPECT_EQ(parse_noise("laplace"), Noise::Laplace);
  EXPECT_THROW(parse_noise("cauchy"), InvalidInput);
}
