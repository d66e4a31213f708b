#ifndef POSTSEL_SIMULATE_HPP
#define POSTSEL_SIMULATE_HPP

// Simulation studies on rare-variant-like designs: data generation, the per-cell
// replicate loop and metric aggregation.

#include <atomic>
#include <functional>
#include <chrono>
#include <map>
#include <mutex>
#include <thread>

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/laplace_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>
#include <boost/random/chi_squared_distribution.hpp>

#include "postsel/analyze.hpp"

namespace postsel {

enum class Noise { Normal, Laplace, Uniform };
enum class SnrScale { PerObservation, Total };
enum class TestKind { Wald, LinearSymmetric };
enum class Study { Fdr, Power, Rmse, Coverage };

inline const char* to_string(Noise n) {
  switch (n) {
    case Noise::Normal: return "normal";
    case Noise::Laplace: return "laplace";
    case Noise::Uniform: return "uniform";
  }
  return "?";
}
inline const char* to_string(SnrScale s) { return s == SnrScale::PerObservation ? "per_observation" : "total"; }
inline const char* to_string(TestKind t) { return t == TestKind::Wald ? "wald" : "linear"; }
inline const char* to_string(Study s) {
  switch (s) {
    case Study::Fdr: return "fdr";
    case Study::Power: return "power";
    case Study::Rmse: return "rmse";
    case Study::Coverage: return "coverage";
  }
  return "?";
}

inline Noise parse_noise(const std::string& s) {
  for (Noise n : {Noise::Normal, Noise::Laplace, Noise::Uniform})
    if (s == to_string(n)) return n;
  throw InvalidInput("unknown noise law '" + s + "' (expected normal, laplace or uniform)");
}
inline SnrScale parse_snr_scale(const std::string& s) {
  if (s == "per_observation") return SnrScale::PerObservation;
  if (s == "total") return SnrScale::Total;
  throw InvalidInput("unknown snr_scale '" + s + "' (expected per_observation or total)");
}
inline TestKind parse_test_kind(const std::string& s) {
  if (s == "wald") return TestKind::Wald;
  if (s == "linear") return TestKind::LinearSymmetric;
  throw InvalidInput("unknown test '" + s + "' (expected wald or linear)");
}
inline Study parse_study(const std::string& s) {
  for (Study t : {Study::Fdr, Study::Power, Study::Rmse, Study::Coverage})
    if (s == to_string(t)) return t;
  throw InvalidInput("unknown study '" + s + "' (expected fdr, power, rmse or coverage)");
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

/// Genotype-like design: column j has marginal Binomial(2, g_j), g_j ~ Gamma(1, rate 300)
/// restricted to [2e-4, 0.1]; dependence between columns comes from two latent AR(0.8) rows per
/// subject. independent_latent replaces the AR correlation by the identity.
inline Matrix gen_rare_variant_design(Index n, Index m, std::uint64_t seed, bool independent_latent = false) {
  require(n >= 1 && m >= 1, "design: n and m must be positive");
  Rng gen(seed);
  boost::random::gamma_distribution<double> gamma(1.0, 1.0 / 300.0);
  Vector cut(m);
  for (Index j = 0; j < m; ++j) {
    double g;
    do g = gamma(gen);
    while (g < 2e-4 || g > 0.1);
    cut(j) = normal_quantile(g);  // Phi(r) <= g  <=>  r <= Phi^{-1}(g)
  }
  boost::random::normal_distribution<double> norm;
  const double rho = independent_latent ? 0.0 : 0.8, innov = std::sqrt(1.0 - rho * rho);
  Matrix x = Matrix::Zero(n, m);
  for (Index i = 0; i < n; ++i) {
    for (int k = 0; k < 2; ++k) {
      double r = norm(gen);
      for (Index j = 0; j < m; ++j) {
        if (j > 0) r = rho * r + innov * norm(gen);
        if (r <= cut(j)) x(i, j) += 1.0;
      }
    }
  }
  return x;
}

/// s nonzero Laplace(1) coordinates on a uniformly random support, rescaled by one common
/// factor so that sqrt(beta' X'X beta) = snr.
inline Vector gen_coefficients(Index m, Index s, double snr, const Matrix& x, std::uint64_t seed) {
  require(s >= 0 && s <= m, "coefficients: need 0 <= s <= m");
  require(snr >= 0.0, "coefficients: snr must be nonnegative");
  require(x.cols() == m, "coefficients: design has the wrong number of columns");
  Vector beta = Vector::Zero(m);
  if (snr == 0.0 || s == 0) return beta;
  Rng gen(seed);
  std::vector<Index> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), Index(0));
  for (Index k = 0; k < s; ++k) {  // partial Fisher-Yates
    std::uniform_int_distribution<Index> pick(k, m - 1);
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(gen))]);
  }
  boost::random::laplace_distribution<double> lap(0.0, 1.0);
  for (Index k = 0; k < s; ++k) beta(idx[static_cast<std::size_t>(k)]) = lap(gen);
  const double q = (x * beta).squaredNorm();
  if (!(q > 0.0)) throw InvalidInput("coefficients: beta' X'X beta is zero, cannot reach the requested snr");
  return beta * (snr / std::sqrt(q));
}

template <class Gen>
double draw_noise(Noise law, Gen& gen) {
  switch (law) {
    case Noise::Normal: {
      boost::random::normal_distribution<double> d;
      return d(gen);
    }
    case Noise::Laplace: {
      boost::random::laplace_distribution<double> d(0.0, 1.0 / std::sqrt(2.0));
      return d(gen);
    }
    case Noise::Uniform: {
      boost::random::uniform_real_distribution<double> d(-std::sqrt(3.0), std::sqrt(3.0));
      return d(gen);
    }
  }
  return 0.0;
}

struct SimulatedData {
  Vector y;
  SummaryStats stats;
  bool ridged = false;
};

namespace detail {

/// Centered Gram matrix X_c'X_c, with a 1e-10 * trace ridge when it is not positive definite.
inline std::pair<Matrix, bool> centered_gram(const Matrix& x) {
  const Matrix xc = x.rowwise() - x.colwise().mean();
  Matrix g = xc.transpose() * xc;
  Eigen::LLT<Matrix> llt(g);
  bool ridged = false;
  const double tr = g.trace();
  if (llt.info() != Eigen::Success || Eigen::SelfAdjointEigenSolver<Matrix>(g).eigenvalues().minCoeff() <= 1e-12 * tr) {
    g.diagonal().array() += 1e-10 * std::max(tr, 1e-300);
    ridged = true;
  }
  return {g, ridged};
}

}  // namespace detail

/// y = X beta + noise (noise_scale 0 gives the noiseless diagnostic), least squares with an
/// intercept, sigma^2 from the intercept-only fit, Sigma = sigma^2 (X_c'X_c)^{-1}.
inline SimulatedData gen_response_and_stats(const Matrix& x, const Vector& beta, Noise noise, std::uint64_t seed,
                                            double noise_scale = 1.0) {
  require(beta.size() == x.cols(), "response: beta has the wrong dimension");
  require(x.rows() > x.cols() + 1, "response: need more observations than coefficients plus one");
  Rng gen(seed);
  SimulatedData out;
  out.y = x * beta;
  for (Index i = 0; i < out.y.size(); ++i) out.y(i) += noise_scale * draw_noise(noise, gen);
  auto [g, ridged] = detail::centered_gram(x);
  out.ridged = ridged;
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Vector z = xc.transpose() * out.y;
  Eigen::LDLT<Matrix> ldlt(g);
  const Vector bhat = ldlt.solve(z);
  const double ybar = out.y.mean();
  const double s2 = (out.y.array() - ybar).square().sum() / static_cast<double>(out.y.size() - 1);
  require(s2 > 0.0, "response: zero response variance");
  out.stats = SummaryStats::make(bhat, s2 * ldlt.solve(Matrix::Identity(g.rows(), g.cols())));
  return out;
}

/// Design redrawn until every column is observed and X_c'X_c is well conditioned, as for a
/// study that only analyzes variants seen in the sample.
inline Matrix gen_observed_design(Index n, Index m, std::uint64_t seed, bool independent_latent = false) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Matrix x = gen_rare_variant_design(n, m, derive_seed(seed, {attempt}), independent_latent);
    if ((x.colwise().sum().array() > 0.0).all() && !detail::centered_gram(x).second) return x;
  }
  throw NumericalFailure("design: no full-rank design in 1000 draws; increase n");
}

// ---------------------------------------------------------------------------
// Study configuration
// ---------------------------------------------------------------------------

struct StudyConfig {
  std::string name = "custom";
  Study study = Study::Fdr;
  std::vector<long> n{2000};
  std::vector<long> m{50};
  std::vector<long> s{3};
  std::vector<double> snr{0.0};
  std::vector<Noise> noise{Noise::Normal};
  TestKind test = TestKind::Wald;
  SnrScale snr_scale = SnrScale::PerObservation;
  double t1 = 0.001;
  double alpha = 0.05;                 // confidence level for interval studies
  std::vector<double> fdr_levels{0.1};  // nominal BH levels
  std::vector<Method> methods{Method::Naive, Method::Poly, Method::Gn, Method::Hybrid};
  long replicates = 1000;   // selected replicates per cell
  double max_dataset_factor = 20.0;  // cap on datasets: factor * replicates / t1
  long max_block = 2000;    // datasets drawn per design at most
  double selected_per_design = 2.0;  // target expected selected replicates per design
  long sgd_check = 0;       // replicates per cell on which the SGD MLE is compared with the line search
  long sgd_steps = 50000;
  bool independent_latent = false;
  std::uint64_t seed = 20240601;
  int threads = 1;
};

struct Cell {
  long n, m, s;
  double snr;
  Noise noise;
};

struct StudyRecord {
  std::string study;
  Cell cell;
  std::string test;
  std::string method;
  std::string metric;
  double level = kNaN;
  double value = kNaN;
  double se = kNaN;
  long n_selected = 0;
  long n_datasets = 0;
  bool insufficient = false;
};

struct StudyResult {
  StudyConfig config;
  std::vector<StudyRecord> records;
  double seconds = 0.0;
};

inline std::vector<Cell> cells_of(const StudyConfig& c) {
  std::vector<Cell> out;
  for (long n : c.n)
    for (long m : c.m)
      for (long s : c.s)
        for (double snr : c.snr)
          for (Noise noise : c.noise) {
            require(s <= m, "scenario: s must not exceed m");
            require(n > m + 1, "scenario: n must exceed m + 1");
            out.push_back({n, m, s, snr, noise});
          }
  return out;
}

// ---------------------------------------------------------------------------
// Per-design data generator
// ---------------------------------------------------------------------------

namespace detail {

/// One design with its coefficients and everything needed to draw summary statistics quickly.
/// Normal noise uses the exact law of the sufficient statistics: z = X_c'y ~ N(G beta, G) and the
/// residual sum of squares is chi-square(n - 1 - m) plus the in-span part. Other noise laws
/// draw full responses and accumulate X'y over the nonzero genotypes.
class DesignSim {
 public:
  DesignSim(const StudyConfig& cfg, const Cell& cell, std::uint64_t seed) : cell_(cell) {
    x_ = gen_observed_design(cell.n, cell.m, derive_seed(seed, {2}), cfg.independent_latent);
    g_ = centered_gram(x_).first;
    const double target = cfg.snr_scale == SnrScale::PerObservation ? cell.snr * std::sqrt(double(cell.n)) : cell.snr;
    beta_ = gen_coefficients(cell.m, cell.s, target, x_, derive_seed(seed, {3}));
    llt_.compute(g_);
    ginv_ = llt_.solve(Matrix::Identity(cell.m, cell.m));
    gbeta_ = g_ * beta_;
    l_ = llt_.matrixL();
    if (cfg.test == TestKind::LinearSymmetric) {
      a_.resize(cell.m);
      std::uniform_int_distribution<int> coin(0, 1);
      Rng sg(derive_seed(seed, {4}));
      for (Index j = 0; j < cell.m; ++j) {
        const int flip = coin(sg) ? 1 : -1;
        a_(j) = beta_(j) > 0 ? 1.0 : beta_(j) < 0 ? -1.0 : double(flip);
      }
      ginv_a_ = ginv_ * a_;
      a_ginv_a_ = a_.dot(ginv_a_);
      lin_z_ = normal_upper_quantile(0.5 * cfg.t1);
    } else {
      wald_thr_ = chisq_quantile(cfg.t1, double(cell.m));
    }
    if (cell.noise != Noise::Normal) {
      xb_ = x_ * beta_;
      colmean_ = x_.colwise().mean().transpose();
      nz_.resize(static_cast<std::size_t>(cell.m));
      for (Index j = 0; j < cell.m; ++j)
        for (Index i = 0; i < cell.n; ++i)
          if (x_(i, j) != 0.0) nz_[static_cast<std::size_t>(j)].push_back({i, x_(i, j)});
    }
  }

  const Vector& beta() const { return beta_; }
  const Vector& contrast() const { return a_; }

  /// Exact selection probability with sigma = 1 known, used only to size design blocks.
  double approx_selection_probability(const StudyConfig& cfg) const {
    if (cfg.test == TestKind::Wald) return chisq_sf(wald_thr_, double(cell_.m), beta_.dot(gbeta_));
    const double mean = a_.dot(beta_), sd = std::sqrt(a_ginv_a_);
    return normal_cdf((-lin_z_ * sd - mean) / sd) + normal_tail((lin_z_ * sd - mean) / sd);
  }

  /// Draws the sufficient statistics (z = X_c'y, residual sum of squares about the mean).
  void draw(Rng& gen, Vector& z, double& ss) const {
    const Index m = cell_.m, n = cell_.n;
    if (cell_.noise == Noise::Normal) {
      boost::random::normal_distribution<double> norm;
      Vector xi(m);
      for (Index j = 0; j < m; ++j) xi(j) = norm(gen);
      const Vector u = l_ * xi;  // X_c' eps
      z = gbeta_ + u;
      boost::random::chi_squared_distribution<double> chi(double(n - 1 - m));
      // |y - ybar|^2 = beta'G beta + 2 beta'u + u'G^{-1}u + chi2(n - 1 - m)
      ss = beta_.dot(gbeta_) + 2.0 * beta_.dot(u) + xi.squaredNorm() + chi(gen);
      return;
    }
    Vector y(n);
    double sum = 0.0, sumsq = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double v = xb_(i) + draw_noise(cell_.noise, gen);
      y(i) = v;
      sum += v;
      sumsq += v * v;
    }
    const double ybar = sum / double(n);
    z.resize(m);
    for (Index j = 0; j < m; ++j) {
      double acc = 0.0;
      for (const auto& [i, v] : nz_[static_cast<std::size_t>(j)]) acc += v * y(i);
      z(j) = acc - double(n) * colmean_(j) * ybar;
    }
    ss = sumsq - double(n) * ybar * ybar;
  }

  /// Selection check on the sufficient statistics without forming Sigma.
  bool selected(const Vector& z, double ss, const StudyConfig& cfg) const {
    const double s2 = ss / double(cell_.n - 1);
    if (cfg.test == TestKind::Wald) return z.dot(ginv_ * z) / s2 > wald_thr_;
    return std::abs(ginv_a_.dot(z)) > lin_z_ * std::sqrt(s2 * a_ginv_a_);
  }

  SummaryStats stats(const Vector& z, double ss) const {
    const double s2 = ss / double(cell_.n - 1);
    return SummaryStats::make(ginv_ * z, s2 * ginv_);
  }

 private:
  Cell cell_;
  Matrix x_, g_, ginv_, l_;
  Eigen::LLT<Matrix> llt_;
  Vector beta_, gbeta_, a_, ginv_a_, xb_, colmean_;
  double a_ginv_a_ = 0.0, lin_z_ = 0.0, wald_thr_ = 0.0;
  std::vector<std::vector<std::pair<Index, double>>> nz_;
};

/// Mean of per-replicate values with a standard error clustered by design: replicates that
/// share a design (and its coefficients) are not independent.
struct Accumulator {
  double sum = 0.0, max = -kInf;
  long count = 0, clusters = 0;
  double ss_sum2 = 0.0, ss_sumn = 0.0, ss_n2 = 0.0;  // sums of S_d^2, S_d n_d, n_d^2

  void add_cluster(double s, long n, double cluster_max) {
    if (n == 0) return;
    sum += s;
    count += n;
    ++clusters;
    ss_sum2 += s * s;
    ss_sumn += s * double(n);
    ss_n2 += double(n) * double(n);
    max = std::max(max, cluster_max);
  }
  void add(double v) { add_cluster(v, 1, v); }
  double mean() const { return count ? sum / double(count) : kNaN; }
  double se() const {
    if (clusters < 2) return kNaN;
    const double mu = mean();
    const double dev = std::max(0.0, ss_sum2 - 2.0 * mu * ss_sumn + mu * mu * ss_n2);
    return std::sqrt(double(clusters) / double(clusters - 1) * dev) / double(count);
  }
};

struct MetricKey {
  std::string method, metric;
  double level;
  bool operator<(const MetricKey& o) const {
    if (method != o.method) return method < o.method;
    if (metric != o.metric) return metric < o.metric;
    return level < o.level;
  }
};

using Outcome = std::vector<std::pair<MetricKey, double>>;

inline Outcome replicate_outcome(const StudyConfig& cfg, const SummaryStats& stats, const Vector& beta,
                                 const Vector& contrast, std::uint64_t seed) {
  const Index m = stats.dim();
  const AggregateTest test = cfg.test == TestKind::Wald ? make_wald_test(stats, cfg.t1)
                                                        : make_linear_test(contrast, stats, LinearSpec::symmetric(cfg.t1));
  Outcome out;
  auto put = [&](const std::string& method, const std::string& metric, double level, double v) {
    out.push_back({{method, metric, level}, v});
  };
  std::vector<bool> is_null(static_cast<std::size_t>(m));
  long nonzero = 0;
  for (Index j = 0; j < m; ++j) {
    is_null[static_cast<std::size_t>(j)] = beta(j) == 0.0;
    nonzero += beta(j) != 0.0;
  }

  AnalysisOptions opt;
  opt.alpha = cfg.alpha;
  opt.adjustments = {};
  opt.gn.seed = seed;

  if (cfg.study == Study::Fdr || cfg.study == Study::Power) {
    opt.methods = cfg.methods;
    opt.intervals = false;
    opt.methods.erase(std::remove(opt.methods.begin(), opt.methods.end(), Method::Mle), opt.methods.end());
    opt.methods.erase(std::remove(opt.methods.begin(), opt.methods.end(), Method::Regime), opt.methods.end());
    const InferenceReport rep = analyze(stats, test, opt);
    std::vector<std::pair<std::string, double CoordinateInference::*>> cols{{"naive", &CoordinateInference::p_naive}};
    if (opt.wants(Method::Poly)) cols.push_back({"poly", &CoordinateInference::p_poly});
    if (opt.wants(Method::Gn)) cols.push_back({"gn", &CoordinateInference::p_gn});
    if (opt.wants(Method::Hybrid)) cols.push_back({"hybrid", &CoordinateInference::p_hybrid});
    for (const auto& [name, field] : cols) {
      std::vector<double> p;
      for (const auto& c : rep.coords) p.push_back(c.*field);
      const std::vector<double> adj = bh_adjust(p);
      for (double q : cfg.fdr_levels) {
        std::vector<bool> rej(adj.size());
        long true_rej = 0;
        for (std::size_t i = 0; i < adj.size(); ++i) {
          rej[i] = adj[i] <= q;
          true_rej += rej[i] && !is_null[i];
        }
        put(name, "fdr", q, false_discovery_proportion(rej, is_null));
        if (nonzero > 0) put(name, "power", q, double(true_rej) / double(nonzero));
      }
    }
    return out;
  }

  if (cfg.study == Study::Rmse) {
    const double naive_mse = (stats.beta_hat - beta).squaredNorm() / double(m);
    put("naive", "mse", kNaN, naive_mse);
    MleResult mle = conditional_mle(stats, test, {});
    const double mle_mse = (mle.beta_tilde - beta).squaredNorm() / double(m);
    put("mle", "mse", kNaN, mle_mse);
    put("mle", "mse_gain", kNaN, naive_mse - mle_mse);  // paired, so its SE is that of the difference
    if (test.is_quadratic()) {
      const bool ok = mle.shrinkage >= 0.0 && mle.shrinkage <= 1.0 &&
                      (mle.beta_tilde - mle.shrinkage * stats.beta_hat).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + stats.beta_hat.cwiseAbs().maxCoeff());
      put("mle", "shrinkage_invariant", kNaN, ok ? 1.0 : 0.0);
      put("mle", "lambda", kNaN, mle.shrinkage);
      put("mle", "penalty_within_bound", kNaN, (mle.penalty >= 0.0 && mle.penalty <= -std::log(cfg.t1) + 1e-9) ? 1.0 : 0.0);
    }
    return out;
  }

  // Coverage study.
  opt.pvalues = false;
  opt.methods = cfg.methods;
  opt.methods.erase(std::remove(opt.methods.begin(), opt.methods.end(), Method::Mle), opt.methods.end());
  const InferenceReport rep = analyze(stats, test, opt);
  std::vector<std::pair<std::string, Interval CoordinateInference::*>> cols{{"naive", &CoordinateInference::ci_naive}};
  if (opt.wants(Method::Poly)) cols.push_back({"poly", &CoordinateInference::ci_poly});
  if (opt.wants(Method::Gn)) cols.push_back({"gn", &CoordinateInference::ci_gn});
  if (opt.wants(Method::Hybrid)) cols.push_back({"hybrid", &CoordinateInference::ci_hybrid});
  if (opt.wants(Method::Regime)) cols.push_back({"regime", &CoordinateInference::ci_regime});
  for (const auto& [name, field] : cols) {
    long covered = 0, signs = 0;
    double width = 0.0;
    for (Index j = 0; j < m; ++j) {
      const Interval& ci = rep.coords[static_cast<std::size_t>(j)].*field;
      covered += ci.contains(beta(j));
      width += ci.width() / stats.se(j);
      if (beta(j) != 0.0) signs += (beta(j) > 0.0 && ci.lo > 0.0) || (beta(j) < 0.0 && ci.hi < 0.0);
    }
    put(name, "coverage", kNaN, double(covered) / double(m));
    put(name, "width_se", kNaN, width / double(m));
    if (nonzero > 0) put(name, "sign_power", kNaN, double(signs) / double(nonzero));
  }
  if (opt.wants(Method::Regime))
    put("regime", "unconditional_rate", kNaN, rep.regime.regime == Regime::Unconditional ? 1.0 : 0.0);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Running a study
// ---------------------------------------------------------------------------

using ProgressFn = std::function<void(const std::string&)>;

/// Runs one cell: designs are drawn in a fixed order; each design yields a block of datasets
/// (size chosen once per cell from the selection probability of a pilot design) and every
/// selected dataset in the block is a replicate. The
/// first `replicates` selected datasets in (design, dataset) order are kept, so the result does
/// not depend on the number of threads.
inline std::vector<StudyRecord> run_cell(const StudyConfig& cfg, const Cell& cell, std::uint64_t cell_seed,
                                         const ProgressFn& progress = {}) {
  const detail::DesignSim pilot(cfg, cell, derive_seed(cell_seed, {0xffffffff}));
  const double p = std::max(pilot.approx_selection_probability(cfg), 1e-12);
  const long block = std::clamp<long>(std::lround(cfg.selected_per_design / p), 1, cfg.max_block);
  const double cap = cfg.max_dataset_factor * double(cfg.replicates) / cfg.t1;

  struct DesignResult {
    std::vector<detail::Outcome> outcomes;
    long datasets = 0, failures = 0;
  };
  std::map<detail::MetricKey, detail::Accumulator> acc;
  long selected = 0, datasets = 0, failures = 0;
  const int threads = std::max(1, cfg.threads);
  const long batch = std::max<long>(threads * 4, 8);
  long next_design = 0;
  bool done = false;

  auto process = [&](long d, DesignResult& res) {
    const std::uint64_t dseed = derive_seed(cell_seed, {std::uint64_t(d)});
    const detail::DesignSim sim(cfg, cell, dseed);
    Rng gen(derive_seed(dseed, {5}));
    Vector z;
    double ss = 0.0;
    for (long k = 0; k < block; ++k) {
      sim.draw(gen, z, ss);
      ++res.datasets;
      if (!sim.selected(z, ss, cfg)) continue;
      try {
        const SummaryStats st = sim.stats(z, ss);
        res.outcomes.push_back(detail::replicate_outcome(cfg, st, sim.beta(), sim.contrast(), derive_seed(dseed, {6, std::uint64_t(k)})));
      } catch (const Error&) {
        ++res.failures;
      }
    }
  };

  while (!done) {
    std::vector<DesignResult> results(static_cast<std::size_t>(batch));
    if (threads == 1) {
      for (long b = 0; b < batch; ++b) process(next_design + b, results[static_cast<std::size_t>(b)]);
    } else {
      std::atomic<long> cursor{0};
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          for (long b; (b = cursor.fetch_add(1)) < batch;) process(next_design + b, results[static_cast<std::size_t>(b)]);
        });
      for (auto& th : pool) th.join();
    }
    next_design += batch;
    for (auto& r : results) {
      if (done) break;
      datasets += r.datasets;
      failures += r.failures;
      std::map<detail::MetricKey, std::tuple<double, long, double>> cluster;
      for (auto& o : r.outcomes) {
        for (auto& [key, v] : o) {
          auto& [cs, cn, cm] = cluster.try_emplace(key, 0.0, 0L, -kInf).first->second;
          cs += v;
          ++cn;
          cm = std::max(cm, v);
        }
        if (++selected >= cfg.replicates) {
          done = true;
          break;
        }
      }
      for (const auto& [key, c] : cluster) acc[key].add_cluster(std::get<0>(c), std::get<1>(c), std::get<2>(c));
    }
    if (double(datasets) >= cap) done = true;
    if (progress && !done) progress(std::to_string(selected) + "/" + std::to_string(cfg.replicates) + " selected");
  }

  // Optional check of the stochastic-gradient MLE against the exact line search.
  if (cfg.study == Study::Rmse && cfg.sgd_check > 0 && cfg.test == TestKind::Wald) {
    long checked = 0;
    for (long d = 0; checked < cfg.sgd_check && d < 100000; ++d) {
      const std::uint64_t dseed = derive_seed(cell_seed, {0x5347, std::uint64_t(d)});
      const detail::DesignSim sim(cfg, cell, dseed);
      Rng gen(derive_seed(dseed, {5}));
      Vector z;
      double ss = 0.0;
      for (long k = 0; k < block && checked < cfg.sgd_check; ++k) {
        sim.draw(gen, z, ss);
        if (!sim.selected(z, ss, cfg)) continue;
        const SummaryStats st = sim.stats(z, ss);
        const AggregateTest test = make_wald_test(st, cfg.t1);
        SgdOptions so;
        so.steps = cfg.sgd_steps;
        so.seed = derive_seed(dseed, {7, std::uint64_t(k)});
        try {
          const Vector ls = mle_wald_linesearch(st, test).beta_tilde;
          const Vector sg = mle_general_sgd(st, test, so).beta_tilde;
          const double gap = (sg - ls).cwiseAbs().maxCoeff() / st.se.maxCoeff();
          acc[{"sgd", "gap_over_max_se", kNaN}].add(gap);
          acc[{"sgd", "within_0.05_se", kNaN}].add(gap <= 0.05 ? 1.0 : 0.0);
          acc[{"sgd", "failure", kNaN}].add(0.0);
        } catch (const Error&) {
          acc[{"sgd", "failure", kNaN}].add(1.0);
        }
        ++checked;
      }
    }
  }

  std::vector<StudyRecord> out;
  const bool insufficient = selected < cfg.replicates;
  auto rec = [&](const std::string& method, const std::string& metric, double level, double v, double se) {
    out.push_back({to_string(cfg.study), cell, to_string(cfg.test), method, metric, level, v, se, selected, datasets, insufficient});
  };
  const double rate = datasets ? double(selected) / double(datasets) : kNaN;
  rec("all", "selection_rate", kNaN, rate, datasets ? std::sqrt(rate * (1.0 - rate) / double(datasets)) : kNaN);
  rec("all", "numerical_failures", kNaN, double(failures), 0.0);
  for (const auto& [key, a] : acc) {
    if (key.metric == "mse") {
      const double mse = a.mean();
      rec(key.method, "rmse", key.level, std::sqrt(mse), a.se() / (2.0 * std::sqrt(std::max(mse, 1e-300))));
    } else if (key.metric == "gap_over_max_se") {
      rec(key.method, "gap_over_max_se", key.level, a.mean(), a.se());
      rec(key.method, "gap_over_max_se_max", key.level, a.max, kNaN);
    } else {
      rec(key.method, key.metric, key.level, a.mean(), a.se());
    }
  }
  return out;
}

/// Seed of a cell: a function of the base seed and the cell's parameters only, so adding or
/// removing other cells does not change its replicates.
inline std::uint64_t cell_seed(const StudyConfig& cfg, const Cell& cell) {
  return derive_seed(cfg.seed, {std::uint64_t(cfg.study), std::uint64_t(cell.n), std::uint64_t(cell.m), std::uint64_t(cell.s),
                                std::uint64_t(std::llround(cell.snr * 1e9)), std::uint64_t(cell.noise), std::uint64_t(cfg.test)});
}

inline StudyResult run_study(const StudyConfig& cfg, const ProgressFn& progress = {}) {
  require(cfg.t1 > 0.0 && cfg.t1 < 1.0, "study: t1 must lie in (0, 1)");
  require(cfg.replicates >= 1, "study: replicates must be positive");
  StudyResult res;
  res.config = cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = cells_of(cfg);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const Cell& cell = cells[c];
    const std::uint64_t cseed = cell_seed(cfg, cell);
    ProgressFn cell_progress;
    std::string label = "cell " + std::to_string(c + 1) + "/" + std::to_string(cells.size()) + " (n=" + std::to_string(cell.n) +
                        " m=" + std::to_string(cell.m) + " s=" + std::to_string(cell.s) + " snr=" + std::to_string(cell.snr) +
                        " " + to_string(cell.noise) + ")";
    if (progress) {
      cell_progress = [&](const std::string& msg) { progress(label + ": " + msg); };
      progress(label);
    }
    auto recs = run_cell(cfg, cell, cseed, cell_progress);
    res.records.insert(res.records.end(), recs.begin(), recs.end());
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline std::vector<double> fdr_grid() {
  std::vector<double> q;
  for (int k = 1; k <= 20; ++k) q.push_back(0.01 * k);
  return q;
}

inline std::vector<std::string> preset_names() {
  return {"fig2-desk", "paper-scale", "fig3-desk", "fig4-desk", "fig5-desk", "fig8-desk", "smoke"};
}

inline StudyConfig preset(const std::string& name) {
  StudyConfig c;
  c.name = name;
  if (name == "fig2-desk" || name == "paper-scale") {
    c.study = Study::Fdr;
    c.n = {name == "fig2-desk" ? 2000L : 10000L};
    c.m = {50};
    c.s = {3};
    c.snr = {0.0, 0.032};
    c.noise = {Noise::Normal, Noise::Laplace, Noise::Uniform};
    c.fdr_levels = fdr_grid();
    c.replicates = 2000;
  } else if (name == "fig3-desk") {
    c.study = Study::Power;
    c.n = {10000};
    c.m = {50};
    c.s = {1, 2, 4, 8};
    c.snr = {0.032, 0.064, 0.128, 0.256};
    c.fdr_levels = {0.1};
    c.replicates = 2000;
  } else if (name == "fig4-desk") {
    c.study = Study::Rmse;
    c.n = {5000, 20000};
    c.m = {5, 20};
    c.s = {2};
    c.snr = {0.0, 0.025};
    c.methods = {Method::Naive, Method::Mle};
    c.replicates = 1000;
    c.sgd_check = 10;
  } else if (name == "fig5-desk" || name == "fig8-desk") {
    c.study = Study::Coverage;
    c.n = {10000};
    c.m = {20};
    c.s = {1, 2, 4, 8};
    c.snr = {0.0};
    for (int k = 0; k <= 8; ++k) c.snr.push_back(0.001 * std::pow(2.0, k));
    c.methods = {Method::Naive, Method::Poly, Method::Regime};
    c.replicates = 1000;
    if (name == "fig8-desk") c.test = TestKind::LinearSymmetric;
  } else if (name == "smoke") {
    c.study = Study::Fdr;
    c.n = {500};
    c.m = {5};
    c.s = {1};
    c.snr = {0.0, 0.1};
    c.t1 = 0.05;
    c.fdr_levels = {0.05, 0.1};
    c.replicates = 50;
  } else {
    std::string names;
    for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw InvalidInput("unknown preset '" + name + "'; available presets: " + names);
  }
  return c;
}

}  // namespace postsel

#endif  // POSTSEL_SIMULATE_HPP
