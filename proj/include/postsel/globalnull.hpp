#ifndef POSTSEL_GLOBALNULL_HPP
#define POSTSEL_GLOBALNULL_HPP

// The post-selection law of beta_hat at a fixed mean: samplers, one-dimensional
// conditional laws of a coordinate, global-null p-values and confidence bounds.

#include <map>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "postsel/polyhedral.hpp"

namespace postsel {

// ---------------------------------------------------------------------------
// Sampling N(mu, Sigma) conditioned on selection
// ---------------------------------------------------------------------------

enum class SamplerMode { Auto, Rejection, Gibbs };

inline const char* to_string(SamplerMode m) {
  switch (m) {
    case SamplerMode::Auto: return "auto";
    case SamplerMode::Rejection: return "rejection";
    case SamplerMode::Gibbs: return "gibbs";
  }
  return "?";
}

struct SamplerOptions {
  SamplerMode mode = SamplerMode::Auto;
  double min_rejection_acceptance = 0.1;  // Auto picks rejection at or above this acceptance
  int burn_in = 500;                      // Gibbs sweeps discarded before the first draw
  int thin = 5;                           // Gibbs sweeps between draws
  long max_rejection_tries = 100'000'000;
};

class SelectionSampler {
 public:
  /// direction: a selected point (normally beta_hat) used to repair a non-selected initial state.
  SelectionSampler(const Matrix& sigma, AggregateTest test, Vector mu, const Vector& direction, std::uint64_t seed,
                   SamplerOptions opt = {})
      : test_(std::move(test)), opt_(opt), mvn_(mu, sigma), gen_(seed) {
    const Index m = sigma.rows();
    require(test_.dim() == m && mu.size() == m && direction.size() == m, "sampler: dimension mismatch");
    mode_ = opt_.mode;
    if (mode_ != SamplerMode::Gibbs) {
      try {
        acceptance_ = selection_probability(test_, sigma, mvn_.mean());
      } catch (const Error&) {
        acceptance_ = kNaN;
      }
      if (mode_ == SamplerMode::Auto)
        mode_ = acceptance_ >= opt_.min_rejection_acceptance ? SamplerMode::Rejection : SamplerMode::Gibbs;
    }
    if (mode_ == SamplerMode::Gibbs) init_gibbs(sigma, direction);
    x_.resize(m);
  }

  SamplerMode mode() const { return mode_; }
  /// Exact selection probability at the construction mean (NaN when it could not be computed).
  double acceptance() const { return acceptance_; }
  const Vector& mean() const { return mvn_.mean(); }

  /// Changes the sampling mean; a Gibbs chain continues from its current state.
  void set_mean(const Vector& mu) {
    require(mu.size() == mvn_.dim(), "sampler: mean has the wrong dimension");
    mvn_.set_mean(mu);
  }

  /// Next draw. Gibbs mode performs `sweeps` sweeps (default: the thinning interval).
  const Vector& next(int sweeps = -1) {
    if (mode_ == SamplerMode::Rejection) {
      for (long k = 0;; ++k) {
        if (k >= opt_.max_rejection_tries) throw NumericalFailure("rejection sampler: acceptance too low");
        mvn_.draw(gen_, x_);
        if (is_selected(test_, test_statistic(test_, x_))) return x_;
      }
    }
    if (!burned_) {
      for (int s = 0; s < opt_.burn_in; ++s) sweep();
      burned_ = true;
    }
    const int n = sweeps < 0 ? opt_.thin : sweeps;
    for (int s = 0; s < n; ++s) sweep();
    return x_;
  }

  /// count x m matrix of draws.
  Matrix sample(Index count) {
    Matrix out(count, mvn_.dim());
    for (Index r = 0; r < count; ++r) out.row(r) = next().transpose();
    return out;
  }

  /// One Gibbs sweep: each coordinate is redrawn from its exact truncated-normal law given
  /// W = x - c_j x_j, moving x along c_j = Sigma e_j / Sigma_jj.
  void sweep() {
    const Index m = mvn_.dim();
    const Vector& mu = mvn_.mean();
    if (++since_refresh_ >= 25) refresh();
    for (Index j = 0; j < m; ++j) {
      const double t = x_(j);
      TruncationRegion region = TruncationRegion::full_line();
      if (test_.is_quadratic()) {
        const double cv = c_.col(j).dot(v_);
        const double ckc = ckc_(j);
        const double wkc = cv - t * ckc;
        const double wkw = s_ - 2.0 * t * cv + t * t * ckc;
        region = quadratic_region(wkw, wkc, ckc, test_.quadratic().threshold, sd_(j));
        const double nt = sample_truncnorm(mu(j), var_(j), region, gen_);
        const double dt = nt - t;
        x_.noalias() += dt * c_.col(j);
        v_.noalias() += dt * kc_.col(j);
        s_ = wkw + 2.0 * nt * wkc + nt * nt * ckc;
      } else {
        const double aw = ax_ - ac_(j) * t;
        region = linear_region(aw, ac_(j), test_.linear(), sd_(j));
        const double nt = sample_truncnorm(mu(j), var_(j), region, gen_);
        x_.noalias() += (nt - t) * c_.col(j);
        ax_ = aw + ac_(j) * nt;
      }
    }
  }

 private:
  void init_gibbs(const Matrix& sigma, const Vector& direction) {
    const Index m = sigma.rows();
    var_ = sigma.diagonal();
    require((var_.array() > 0.0).all(), "gibbs sampler: every variance must be positive");
    sd_ = var_.cwiseSqrt();
    c_ = sigma * var_.cwiseInverse().asDiagonal();
    if (test_.is_quadratic()) {
      kc_ = test_.quadratic().K * c_;
      ckc_ = (c_.array() * kc_.array()).colwise().sum().transpose();
    } else {
      ac_ = c_.transpose() * test_.linear().a;
    }
    x_ = mvn_.draw(gen_);
    if (!is_selected(test_, test_statistic(test_, x_))) {
      const Vector base = x_;
      double scale = 1.0;
      for (int k = 0;; ++k) {
        if (k > 200) throw NumericalFailure("gibbs sampler: could not find a selected starting point");
        x_ = base + scale * direction;
        if (is_selected(test_, test_statistic(test_, x_))) break;
        scale *= 2.0;
      }
    }
    (void)m;
    refresh();
  }

  void refresh() {
    since_refresh_ = 0;
    if (test_.is_quadratic()) {
      v_.noalias() = test_.quadratic().K * x_;
      s_ = x_.dot(v_);
    } else {
      ax_ = test_.linear().a.dot(x_);
    }
  }

  AggregateTest test_;
  SamplerOptions opt_;
  SamplerMode mode_ = SamplerMode::Auto;
  double acceptance_ = kNaN;
  MvnSampler mvn_;
  Rng gen_;
  Vector x_;
  bool burned_ = false;
  int since_refresh_ = 0;
  // Gibbs state
  Vector var_, sd_;
  Matrix c_, kc_;
  Vector ckc_, ac_;
  Vector v_;
  double s_ = 0.0, ax_ = 0.0;
};

/// count draws from N(mu, Sigma) restricted to the selection event.
inline Matrix sample_post_selection(const Vector& mu, const SummaryStats& stats, const AggregateTest& test, Index count,
                                    std::uint64_t seed, SamplerOptions opt = {}) {
  require(count >= 1, "sample_post_selection: count must be positive");
  SelectionSampler sampler(stats.Sigma, test, mu, stats.beta_hat, seed, opt);
  return sampler.sample(count);
}

// ---------------------------------------------------------------------------
// Null centers
// ---------------------------------------------------------------------------

struct NullCenter {
  Vector mean;
  bool any_parametrization_valid = false;
};

/// Mean with coordinate j equal to zero and E(a'W) at the midpoint of (l, u): the least
/// favourable null for asymmetric two-sided linear tests. Zero in every other case.
inline NullCenter conservative_center(const AggregateTest& test, const SummaryStats& stats, Index j) {
  const Index m = stats.dim();
  require(j >= 0 && j < m, "coordinate index out of range");
  NullCenter out{Vector::Zero(m), false};
  if (!test.is_linear()) return out;
  const LinearTest& t = test.linear();
  if (!std::isfinite(t.l) || !std::isfinite(t.u)) return out;
  const double mid = 0.5 * (t.l + t.u);
  const double denom = t.a.squaredNorm() - sqr(t.a(j));
  if (denom <= 1e-14 * t.a.squaredNorm()) {
    out.any_parametrization_valid = true;
    return out;
  }
  if (mid == 0.0) return out;
  out.mean = (mid / denom) * t.a;
  out.mean(j) = 0.0;
  return out;
}

inline Vector gn_center(const AggregateTest& test, const SummaryStats& stats, Index j) {
  return conservative_center(test, stats, j).mean;
}

// ---------------------------------------------------------------------------
// One-dimensional conditional law of a coordinate
// ---------------------------------------------------------------------------

/// Law of x_j given selection for x ~ N(center + e_j b, Sigma), b a free parameter and
/// center_j = 0. Available in closed form (up to one-dimensional quadrature) for Wald and
/// linear tests: x_j is independent of W, and the selection probability given x_j is a
/// noncentral chi-square tail (Wald) or a pair of normal tails (linear).
class CoordinateLaw {
 public:
  static bool supported(const AggregateTest& test) {
    return test.is_linear() || (test.quadratic().wald && test.quadratic().null_law.size() == test.dim());
  }

  static CoordinateLaw make(const SummaryStats& stats, const AggregateTest& test, Index j, const Vector& center) {
    require(supported(test), "coordinate law: only Wald and linear tests have a closed form");
    require(j >= 0 && j < stats.dim() && center.size() == stats.dim(), "coordinate law: bad index or center");
    require(std::abs(center(j)) <= 0.0, "coordinate law: center must vanish at the coordinate");
    CoordinateLaw law;
    const Index m = stats.dim();
    law.sj_ = stats.se(j);
    const Vector c = stats.Sigma.col(j) / stats.Sigma(j, j);
    const Vector dir = unit_vector(m, j) - c;  // mean of W per unit b
    if (test.is_quadratic()) {
      const QuadraticTest& q = test.quadratic();
      law.kind_ = Kind::Wald;
      law.rho_ = std::sqrt(std::max(q.threshold, 0.0));
      law.dof_ = static_cast<double>(m - 1);
      const Vector kd = q.K * dir;
      law.q0_ = center.dot(q.K * center);
      law.q1_ = center.dot(kd);
      law.q2_ = dir.dot(kd);
    } else {
      const LinearTest& t = test.linear();
      law.kind_ = Kind::Linear;
      law.lin_ = t;
      law.ac_ = t.a.dot(c);
      law.aw0_ = t.a.dot(center);
      law.aw1_ = t.a.dot(dir);
      law.sw_ = std::sqrt(std::max(0.0, sqr(t.sd) - stats.Sigma(j, j) * sqr(law.ac_)));
      if (law.sw_ <= 1e-10 * t.sd) law.sw_ = 0.0;
      if (t.untruncated()) law.kind_ = Kind::Plain;
    }
    if (law.kind_ == Kind::Wald && law.rho_ == 0.0) law.kind_ = Kind::Plain;
    return law;
  }

  double sd() const { return sj_; }

  /// P(x_j <= x | selection).
  double cdf(double x, double b) const {
    auto [lo, hi] = split(x / sj_, b / sj_);
    return lo / (lo + hi);
  }

  /// P(x_j >= x | selection).
  double sf(double x, double b) const {
    auto [lo, hi] = split(x / sj_, b / sj_);
    return hi / (lo + hi);
  }

  /// P(|x_j| >= |x| | selection).
  double two_sided_tail(double x, double b) const {
    const double z = std::abs(x) / sj_, beta = b / sj_;
    const double outer = mass(-kInf, -z, beta) + mass(z, kInf, beta);
    const double inner = mass(-z, z, beta);
    return std::clamp(outer / (outer + inner), 0.0, 1.0);
  }

  /// Selection probability at parameter b, by the same quadrature.
  double selection_probability(double b) const { return mass(-kInf, kInf, b / sj_); }

 private:
  enum class Kind { Plain, Wald, Linear };

  std::pair<double, double> split(double z, double beta) const {
    const double lo = mass(-kInf, z, beta), hi = mass(z, kInf, beta);
    if (!(lo + hi > 0.0)) throw NumericalFailure("coordinate law: selection probability underflows");
    return {lo, hi};
  }

  static double normal_mass(double z1, double z2, double beta) {
    if (!(z2 > z1)) return 0.0;
    return std::exp(detail::log_std_mass(z1 - beta, z2 - beta));
  }

  // Integral of phi(z - beta) * P(selected | x_j = sd * z) over [z1, z2] (standardized units).
  double mass(double z1, double z2, double beta) const {
    if (!(z2 > z1)) return 0.0;
    switch (kind_) {
      case Kind::Plain: return normal_mass(z1, z2, beta);
      case Kind::Wald: return wald_mass(z1, z2, beta);
      case Kind::Linear: return linear_mass(z1, z2, beta);
    }
    return 0.0;
  }

  double wald_mass(double z1, double z2, double beta) const {
    double total = normal_mass(z1, std::min(z2, -rho_), beta) + normal_mass(std::max(z1, rho_), z2, beta);
    const double a = std::max(z1, -rho_), b = std::min(z2, rho_);
    if (dof_ <= 0.0 || !(b > a)) return total;
    const double bsd = beta * sj_;
    const double ncp = std::max(0.0, q0_ + 2.0 * q1_ * bsd + q2_ * bsd * bsd);
    // z = rho cos(theta) removes the square-root behaviour of the chi-square tail at |z| = rho.
    const double th_lo = std::acos(std::clamp(b / rho_, -1.0, 1.0));
    const double th_hi = std::acos(std::clamp(a / rho_, -1.0, 1.0));
    const double tabulated = tabulated_inner(a, b, th_lo, th_hi, beta, ncp);
    if (!std::isnan(tabulated)) return total + tabulated;
    const double rho = rho_, dof = dof_;
    auto f = [&](double th) {
      const double s = std::sin(th), z = rho * std::cos(th);
      const double y = sqr(rho * s);
      const double dens = std::exp(log_normal_pdf(z - beta));
      if (dens == 0.0) return 0.0;
      return dens * chisq_sf(y, dof, ncp) * rho * s;
    };
    total += integrate(f, th_lo, th_hi);
    return total;
  }

  // Fixed Gauss-Legendre nodes in theta over one inner range. The noncentral tail at each node
  // is a Poisson(ncp/2) mixture of central tails Q_{dof+2i}(y), tabulated once per node, so
  // repeated evaluations at different means cost one dot product per node.
  struct InnerTable {
    std::vector<double> z, w, y, t_next;  // t_next: next recurrence increment per node
    std::vector<std::vector<double>> q;   // q[i][k] = Q_{dof + 2i}(y_k)
  };

  static constexpr int kNodes = 30;
  static constexpr std::size_t kMaxTerms = 3000;

  void extend(InnerTable& t, std::size_t terms) const {
    while (t.q.size() < terms) {
      const std::size_t i = t.q.size();
      std::vector<double> col(t.z.size());
      for (std::size_t k = 0; k < t.z.size(); ++k) {
        if (i == 0) {
          col[k] = t.y[k] > 0.0 ? boost::math::gamma_q(0.5 * dof_, 0.5 * t.y[k]) : 1.0;
          t.t_next[k] = t.y[k] > 0.0 ? std::exp(-0.5 * t.y[k] + 0.5 * dof_ * std::log(0.5 * t.y[k]) - std::lgamma(0.5 * dof_ + 1.0)) : 0.0;
        } else {
          col[k] = std::min(1.0, t.q[i - 1][k] + t.t_next[k]);
          t.t_next[k] *= 0.5 * t.y[k] / (0.5 * dof_ + double(i));
        }
      }
      t.q.push_back(std::move(col));
    }
  }

  double tabulated_inner(double a, double b, double th_lo, double th_hi, double beta, double ncp) const {
    // Poisson weights around the mode, dropped below 1e-18 of the mode weight.
    const double mu = 0.5 * ncp;
    const double mode = std::floor(mu);
    const auto log_w = [&](double i) { return mu > 0.0 ? -mu + i * std::log(mu) - std::lgamma(i + 1.0) : (i == 0.0 ? 0.0 : -kInf); };
    const double lw_mode = log_w(mode);
    double i_lo = mode, i_hi = mode;
    while (i_lo > 0.0 && log_w(i_lo - 1.0) - lw_mode > -41.5) i_lo -= 1.0;
    while (log_w(i_hi + 1.0) - lw_mode > -41.5) i_hi += 1.0;
    if (i_hi + 1.0 > double(kMaxTerms)) return kNaN;

    auto key = std::make_pair(a, b);
    auto it = tables_.find(key);
    if (it == tables_.end()) {
      InnerTable t;
      const auto& xs = boost::math::quadrature::gauss<double, kNodes>::abscissa();
      const auto& ws = boost::math::quadrature::gauss<double, kNodes>::weights();
      const int panels = std::max(1, static_cast<int>(std::ceil((th_hi - th_lo) / (0.25 * M_PI))));
      const double h = (th_hi - th_lo) / panels;
      for (int p = 0; p < panels; ++p) {
        const double mid = th_lo + (p + 0.5) * h;
        for (std::size_t n = 0; n < xs.size(); ++n)
          for (double sgn : {-1.0, 1.0}) {
            if (xs[n] == 0.0 && sgn > 0.0) continue;
            const double th = mid + sgn * 0.5 * h * xs[n];
            const double s = std::sin(th);
            t.z.push_back(rho_ * std::cos(th));
            t.y.push_back(sqr(rho_ * s));
            t.w.push_back(0.5 * h * ws[n] * rho_ * s);
          }
      }
      t.t_next.assign(t.z.size(), 0.0);
      it = tables_.emplace(key, std::move(t)).first;
    }
    InnerTable& t = it->second;
    extend(t, static_cast<std::size_t>(i_hi) + 1);
    std::vector<double> mix(t.z.size(), 0.0);
    for (double i = i_lo; i <= i_hi; i += 1.0) {
      const double wi = std::exp(log_w(i));
      const auto& col = t.q[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < mix.size(); ++k) mix[k] += wi * col[k];
    }
    double total = 0.0;
    for (std::size_t k = 0; k < mix.size(); ++k) total += t.w[k] * std::exp(log_normal_pdf(t.z[k] - beta)) * std::min(1.0, mix[k]);
    return total;
  }

  double selection_given(double z, double beta) const {
    const double mw = aw0_ + aw1_ * beta * sj_;
    const double shift = ac_ * sj_ * z + mw;
    double p = 0.0;
    if (lin_.l > -kInf) p += normal_cdf((lin_.l - shift) / sw_);
    if (lin_.u < kInf) p += normal_tail((lin_.u - shift) / sw_);
    return p;
  }

  double linear_mass(double z1, double z2, double beta) const {
    const double mw = aw0_ + aw1_ * beta * sj_;
    const double scale = ac_ * sj_;
    if (sw_ == 0.0) {
      // Selection is a deterministic function of x_j.
      TruncationRegion r = linear_region(mw, scale, lin_, 1.0);
      double total = 0.0;
      for (const Segment& s : r.segments()) total += normal_mass(std::max(z1, s.lo), std::min(z2, s.hi), beta);
      return total;
    }
    const double lo = std::max(z1, beta - 40.0), hi = std::min(z2, beta + 40.0);
    if (!(hi > lo)) return 0.0;
    std::vector<double> cuts{lo, hi};
    auto add = [&](double v) {
      if (std::isfinite(v) && v > lo && v < hi) cuts.push_back(v);
    };
    add(beta);
    if (std::abs(scale) > 0.0) {
      if (lin_.l > -kInf) add((lin_.l - mw) / scale);
      if (lin_.u < kInf) add((lin_.u - mw) / scale);
    }
    std::sort(cuts.begin(), cuts.end());
    auto f = [&](double z) { return std::exp(log_normal_pdf(z - beta)) * selection_given(z, beta); };
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) total += integrate(f, cuts[k], cuts[k + 1]);
    return total;
  }

  template <class F>
  static double integrate(F& f, double a, double b) {
    if (!(b > a)) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 15, 1e-11);
  }

  Kind kind_ = Kind::Plain;
  double sj_ = 1.0;
  // Wald
  double rho_ = 0.0, dof_ = 0.0, q0_ = 0.0, q1_ = 0.0, q2_ = 0.0;
  // Linear
  LinearTest lin_;
  double ac_ = 0.0, aw0_ = 0.0, aw1_ = 0.0, sw_ = 0.0;
  mutable std::map<std::pair<double, double>, InnerTable> tables_;
};

// ---------------------------------------------------------------------------
// Global-null p-values
// ---------------------------------------------------------------------------

struct GnOptions {
  long draws = 100000;      // Monte-Carlo sample size for the p-value
  long rm_steps = 50000;    // Robbins-Monro iterations per bound
  std::uint64_t seed = 1;
  bool analytic = true;     // use the closed-form coordinate law when available
  SamplerOptions sampler{};
};

struct GnPValue {
  double value = kNaN;
  double se = 0.0;  // Monte-Carlo standard error; zero for the closed form
  bool analytic = false;
};

/// Global-null p-values for every coordinate. The Monte-Carlo path shares one post-selection
/// sample across coordinates and reports the smoothed frequency (k + 1) / (N + 1).
inline std::vector<GnPValue> gn_pvalues(const SummaryStats& stats, const AggregateTest& test, const GnOptions& opt = {}) {
  const Index m = stats.dim();
  require(evaluate(test, stats).selected, "global-null p-value: the data were not selected");
  std::vector<GnPValue> out(static_cast<std::size_t>(m));
  if (opt.analytic && CoordinateLaw::supported(test)) {
    for (Index j = 0; j < m; ++j) {
      auto law = CoordinateLaw::make(stats, test, j, gn_center(test, stats, j));
      out[static_cast<std::size_t>(j)] = {law.two_sided_tail(stats.beta_hat(j), 0.0), 0.0, true};
    }
    return out;
  }
  require(opt.draws >= 1, "global-null p-value: draws must be positive");
  // Coordinates sharing a center share draws.
  std::vector<bool> done(static_cast<std::size_t>(m), false);
  for (Index j = 0; j < m; ++j) {
    if (done[static_cast<std::size_t>(j)]) continue;
    const Vector center = gn_center(test, stats, j);
    SelectionSampler sampler(stats.Sigma, test, center, stats.beta_hat, derive_seed(opt.seed, {0x676e, std::uint64_t(j)}),
                             opt.sampler);
    std::vector<Index> group;
    for (Index k = j; k < m; ++k)
      if (!done[static_cast<std::size_t>(k)] && (gn_center(test, stats, k) - center).cwiseAbs().maxCoeff() == 0.0)
        group.push_back(k);
    std::vector<long> hits(group.size(), 0);
    for (long r = 0; r < opt.draws; ++r) {
      const Vector& z = sampler.next();
      for (std::size_t g = 0; g < group.size(); ++g)
        hits[g] += std::abs(z(group[g])) >= std::abs(stats.beta_hat(group[g]));
    }
    for (std::size_t g = 0; g < group.size(); ++g) {
      const double n = static_cast<double>(opt.draws);
      const double p = (static_cast<double>(hits[g]) + 1.0) / (n + 1.0);
      out[static_cast<std::size_t>(group[g])] = {p, std::sqrt(p * (1.0 - p) / n), false};
      done[static_cast<std::size_t>(group[g])] = true;
    }
  }
  return out;
}

inline GnPValue gn_pvalue(const SummaryStats& stats, const AggregateTest& test, Index j, const GnOptions& opt = {}) {
  require(j >= 0 && j < stats.dim(), "coordinate index out of range");
  if (opt.analytic && CoordinateLaw::supported(test)) {
    require(evaluate(test, stats).selected, "global-null p-value: the data were not selected");
    auto law = CoordinateLaw::make(stats, test, j, gn_center(test, stats, j));
    return {law.two_sided_tail(stats.beta_hat(j), 0.0), 0.0, true};
  }
  return gn_pvalues(stats, test, opt)[static_cast<std::size_t>(j)];
}

// ---------------------------------------------------------------------------
// Global-null confidence bounds
// ---------------------------------------------------------------------------

struct GnInterval {
  Interval ci;
  bool analytic = false;
  bool converged = true;
  double drift = 0.0;  // |third-quarter mean - fourth-quarter mean| of the Robbins-Monro iterates, per bound (max)
};

namespace detail {

struct RmResult {
  double value;
  double drift;
};

/// Robbins-Monro search for b with P_b(x_j <= x | selection) = target, where the sampling
/// mean is e_j b. Step constant c / (i + 10), iterates averaged over the final half.
inline RmResult robbins_monro_bound(SelectionSampler& sampler, Index j, double x, double target, double b0, double c,
                                    long steps) {
  const Index m = sampler.mean().size();
  Vector mu = Vector::Zero(m);
  double b = b0;
  const long half = steps / 2, quarter = steps / 4;
  double sum_half = 0.0, sum_q3 = 0.0, sum_q4 = 0.0;
  for (long i = 1; i <= steps; ++i) {
    mu(j) = b;
    sampler.set_mean(mu);
    const Vector& z = sampler.next(1);
    const double ind = z(j) <= x ? 1.0 : 0.0;
    b += c / static_cast<double>(i + 10) * (ind - target);
    if (i > steps - half) sum_half += b;
    if (i > steps - 2 * quarter && i <= steps - quarter) sum_q3 += b;
    if (i > steps - quarter) sum_q4 += b;
  }
  const double q = static_cast<double>(std::max(quarter, 1L));
  return {sum_half / static_cast<double>(std::max(half, 1L)), std::abs(sum_q3 / q - sum_q4 / q)};
}

}  // namespace detail

/// Interval of b with alpha/2 <= P_{beta = e_j b}(x_j <= beta_hat_j | selection) <= 1 - alpha/2.
inline GnInterval gn_ci(const SummaryStats& stats, const AggregateTest& test, Index j, double alpha, const GnOptions& opt = {}) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(j >= 0 && j < stats.dim(), "coordinate index out of range");
  require(evaluate(test, stats).selected, "global-null interval: the data were not selected");
  const double x = stats.beta_hat(j), sd = stats.se(j);
  GnInterval out;
  if (opt.analytic && CoordinateLaw::supported(test)) {
    auto law = CoordinateLaw::make(stats, test, j, Vector::Zero(stats.dim()));
    auto lower = [&](double b) { return law.sf(x, b) - 0.5 * alpha; };
    auto upper = [&](double b) { return law.cdf(x, b) - 0.5 * alpha; };
    const Interval naive = naive_ci(x, sd, alpha);
    out.ci.lo = monotone_root(lower, true, naive.lo, 0.5 * sd, 1e-7 * sd);
    out.ci.hi = monotone_root(upper, false, naive.hi, 0.5 * sd, 1e-7 * sd);
    out.analytic = true;
  } else {
    require(opt.rm_steps >= 100, "global-null interval: too few Robbins-Monro steps");
    const double z = normal_upper_quantile(0.5 * alpha);
    // Garthwaite-Buckland step constant: twice the inverse slope of the untruncated CDF at the bound.
    const double c = 2.0 * sd / std::exp(log_normal_pdf(z));
    SamplerOptions sopt = opt.sampler;
    sopt.mode = SamplerMode::Gibbs;
    sopt.burn_in = std::max(sopt.burn_in, 50);
    const Vector zero = Vector::Zero(stats.dim());
    SelectionSampler s_lo(stats.Sigma, test, zero, stats.beta_hat, derive_seed(opt.seed, {0x726d, std::uint64_t(j), 0}), sopt);
    SelectionSampler s_hi(stats.Sigma, test, zero, stats.beta_hat, derive_seed(opt.seed, {0x726d, std::uint64_t(j), 1}), sopt);
    auto lo = detail::robbins_monro_bound(s_lo, j, x, 1.0 - 0.5 * alpha, x - z * sd, c, opt.rm_steps);
    auto hi = detail::robbins_monro_bound(s_hi, j, x, 0.5 * alpha, x + z * sd, c, opt.rm_steps);
    out.ci = {lo.value, hi.value};
    out.drift = std::max(lo.drift, hi.drift);
    out.converged = out.drift <= 0.1 * sd;
  }
  if (out.ci.lo > out.ci.hi) std::swap(out.ci.lo, out.ci.hi);
  return out;
}

}  // namespace postsel

#endif  // POSTSEL_GLOBALNULL_HPP
