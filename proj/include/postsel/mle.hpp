#ifndef POSTSEL_MLE_HPP
#define POSTSEL_MLE_HPP

// Conditional maximum likelihood after selection: maximize the Gaussian log-likelihood
// minus the log selection probability.

#include <functional>

#include "postsel/globalnull.hpp"

namespace postsel {

struct MleResult {
  Vector beta_tilde;
  std::string method;
  double shrinkage = kNaN;  // lambda for the Wald line search, delta = a' beta for linear tests
  double objective = kNaN;
  double penalty = kNaN;    // -log P(selection) at the estimate
  bool converged = true;
  std::vector<double> trace;   // objective along the grid, or iterate norm along the SGD path
  double stationarity = kNaN;  // max_j |beta_hat_j - E[z_j]| / MC SE at the estimate (SGD)
  double acceptance = kNaN;    // sampler acceptance (GLM path)
};

namespace detail {

/// Maximizer of f over [lo, hi]: best point of an n-point grid, refined by golden section.
inline double maximize_1d(const std::function<double(double)>& f, double lo, double hi, int n, double tol,
                          std::vector<double>* trace = nullptr) {
  std::vector<double> vals(static_cast<std::size_t>(n));
  int best = 0;
  for (int i = 0; i < n; ++i) {
    double x = lo + (hi - lo) * i / (n - 1);
    vals[static_cast<std::size_t>(i)] = f(x);
    if (vals[static_cast<std::size_t>(i)] > vals[static_cast<std::size_t>(best)]) best = i;
  }
  if (trace) *trace = vals;
  double a = lo + (hi - lo) * std::max(best - 1, 0) / (n - 1);
  double b = lo + (hi - lo) * std::min(best + 1, n - 1) / (n - 1);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  double x = 0.5 * (a + b);
  double grid_x = lo + (hi - lo) * best / (n - 1);
  return f(x) >= vals[static_cast<std::size_t>(best)] ? x : grid_x;
}

}  // namespace detail

/// Wald test (K = Sigma^{-1}): the conditional MLE is lambda * beta_hat with lambda maximizing
/// -(1 - lambda)^2 q / 2 - log P(chi2_m(lambda^2 q) > threshold), q = beta_hat' Sigma^{-1} beta_hat.
inline MleResult mle_wald_linesearch(const SummaryStats& stats, const AggregateTest& test) {
  require(test.is_quadratic() && test.quadratic().wald, "Wald line search needs a quadratic test with K = Sigma^{-1}");
  const QuadraticTest& qt = test.quadratic();
  const Evaluation ev = evaluate(test, stats);
  if (!ev.selected) throw NotSelected("conditional MLE: the data were not selected");
  const double q = ev.statistic, thr = qt.threshold;
  const double m = static_cast<double>(stats.dim());
  auto penalty = [&](double lam) {
    double sf = chisq_sf(thr, m, lam * lam * q);
    return -std::log(std::max(sf, 1e-300));
  };
  auto g = [&](double lam) { return -0.5 * sqr(1.0 - lam) * q + penalty(lam); };
  MleResult r;
  r.method = "wald-linesearch";
  const double lam = std::clamp(detail::maximize_1d(g, 0.0, 1.0, 200, 1e-6, &r.trace), 0.0, 1.0);
  r.shrinkage = lam;
  r.beta_tilde = lam * stats.beta_hat;
  r.objective = g(lam);
  r.penalty = penalty(lam);
  return r;
}

/// Linear test: beta(delta) = beta_hat + (delta - a'beta_hat) Sigma a / (a' Sigma a), with delta
/// maximizing -(delta - a'beta_hat)^2 / (2 a'Sigma a) - log P_delta(a' beta_hat outside (l, u)).
inline MleResult mle_linear_test(const SummaryStats& stats, const AggregateTest& test) {
  require(test.is_linear(), "linear-test MLE needs a linear aggregate test");
  const LinearTest& t = test.linear();
  const Evaluation ev = evaluate(test, stats);
  if (!ev.selected) throw NotSelected("conditional MLE: the data were not selected");
  const double obs = ev.statistic, sd = t.sd;
  auto penalty = [&](double delta) {
    if (t.untruncated()) return 0.0;
    std::array<double, 2> parts{t.l > -kInf ? log_normal_tail((delta - t.l) / sd) : -kInf,
                                t.u < kInf ? log_normal_tail((t.u - delta) / sd) : -kInf};
    return -detail::logsumexp(parts);
  };
  auto h = [&](double delta) { return -0.5 * sqr((delta - obs) / sd) + penalty(delta); };
  MleResult r;
  r.method = "linear-delta";
  double delta = obs;
  if (!t.untruncated()) delta = detail::maximize_1d(h, obs - 6.0 * sd, obs + 6.0 * sd, 200, 1e-9 * sd, &r.trace);
  r.shrinkage = delta;
  r.beta_tilde = stats.beta_hat + ((delta - obs) / (sd * sd)) * (stats.Sigma * t.a);
  r.objective = h(delta);
  r.penalty = penalty(delta);
  return r;
}

struct SgdOptions {
  long steps = 50000;
  double a = 1.0;  // step size gamma_t = a / (b + t)
  double b = 50.0;
  long check_draws = 1000;  // fresh draws for the stationarity residual
  std::uint64_t seed = 1;
  SamplerOptions sampler{};
};

namespace detail {

inline double stationarity_residual(const SummaryStats& stats, const AggregateTest& test, const Vector& beta,
                                    long draws, std::uint64_t seed, const SamplerOptions& sopt) {
  if (draws <= 1) return kNaN;
  SelectionSampler sampler(stats.Sigma, test, beta, stats.beta_hat, seed, sopt);
  const Matrix z = sampler.sample(draws);
  const Vector mean = z.colwise().mean().transpose();
  const Vector sd = ((z.rowwise() - mean.transpose()).array().square().colwise().sum() / double(draws - 1)).sqrt();
  double worst = 0.0;
  for (Index j = 0; j < mean.size(); ++j) {
    const double se = std::max(sd(j) / std::sqrt(double(draws)), 1e-300);
    worst = std::max(worst, std::abs(stats.beta_hat(j) - mean(j)) / se);
  }
  return worst;
}

}  // namespace detail

namespace detail {

/// Sigma * (conditional covariance of z)^{-1}, estimated from `draws` consecutive chain states.
inline Matrix sgd_preconditioner(SelectionSampler& sampler, const Matrix& sigma, long draws) {
  const Index m = sigma.rows();
  Matrix z(draws, m);
  for (long r = 0; r < draws; ++r) z.row(r) = sampler.next(1).transpose();
  const Matrix centered = z.rowwise() - z.colwise().mean();
  Matrix cov = centered.transpose() * centered / static_cast<double>(draws - 1);
  cov.diagonal() += 1e-3 * sigma.diagonal();
  Eigen::LDLT<Matrix> ldlt(cov);
  if (ldlt.info() != Eigen::Success) return Matrix::Identity(m, m);
  return sigma * ldlt.solve(Matrix::Identity(m, m));
}

}  // namespace detail

/// Stochastic approximation of the conditional MLE for any aggregate test. Each step draws one
/// post-selection sample z at the current iterate (persistent Gibbs chain) and moves along
/// P (beta_hat - z), where the gradient is Sigma^{-1}(beta_hat - z) and P = Sigma Cov(z)^{-1}
/// Sigma is a Newton-type preconditioner built from short pilot runs. Returns the average of
/// the last half of the iterates.
inline MleResult mle_general_sgd(const SummaryStats& stats, const AggregateTest& test, const SgdOptions& opt = {}) {
  require(opt.steps >= 1000, "SGD MLE: budget must be at least 1000 steps");
  const Evaluation ev = evaluate(test, stats);
  if (!ev.selected) throw NotSelected("conditional MLE: the data were not selected");
  SamplerOptions sopt = opt.sampler;
  sopt.mode = SamplerMode::Gibbs;
  sopt.burn_in = 200;
  SelectionSampler sampler(stats.Sigma, test, stats.beta_hat, stats.beta_hat, derive_seed(opt.seed, {0x736764}), sopt);
  const long pilot = std::max(200L, opt.steps / 20);
  sampler.next(0);
  Matrix precond = detail::sgd_preconditioner(sampler, stats.Sigma, pilot);
  Vector beta = stats.beta_hat;
  Vector avg = Vector::Zero(stats.dim());
  const double guard = 100.0 * std::max(stats.beta_hat.norm(), stats.se.maxCoeff());
  const long start_avg = opt.steps - opt.steps / 2;
  const long refit = opt.steps / 4;
  MleResult r;
  r.method = "sgd";
  for (long t = 0; t < opt.steps; ++t) {
    sampler.set_mean(beta);
    if (t == refit) precond = detail::sgd_preconditioner(sampler, stats.Sigma, pilot);
    const Vector& z = sampler.next(1);
    const double gamma = opt.a / (opt.b + static_cast<double>(t));
    beta.noalias() += gamma * (precond * (stats.beta_hat - z));
    if (!(beta.norm() <= guard)) throw NumericalFailure("SGD MLE diverged: iterate norm exceeded 100 |beta_hat|");
    if (t >= start_avg) avg += beta;
    if (t % std::max(1L, opt.steps / 100) == 0) r.trace.push_back(beta.norm());
  }
  r.beta_tilde = avg / static_cast<double>(opt.steps - start_avg);
  r.stationarity = detail::stationarity_residual(stats, test, r.beta_tilde, opt.check_draws,
                                                 derive_seed(opt.seed, {0x636b}), opt.sampler);
  r.converged = std::isnan(r.stationarity) || r.stationarity <= 4.0;
  return r;
}

/// Conditional MLE using the closed-form path when one exists.
inline MleResult conditional_mle(const SummaryStats& stats, const AggregateTest& test, const SgdOptions& opt = {}) {
  if (test.is_linear()) return mle_linear_test(stats, test);
  if (test.quadratic().wald) return mle_wald_linesearch(stats, test);
  return mle_general_sgd(stats, test, opt);
}

// ---------------------------------------------------------------------------
// Exact-data path for generalized linear models
// ---------------------------------------------------------------------------

enum class GlmFamily { GaussianIdentity, BernoulliLogit };

struct GlmModel {
  Matrix X;  // n x m
  GlmFamily family = GlmFamily::GaussianIdentity;
  double sigma2 = 1.0;  // noise variance of the Gaussian family
};

/// Selection on the sufficient statistic T = X'y: selected when (T - center)' M (T - center) > threshold.
struct GlmSelection {
  Matrix M;
  Vector center;
  double threshold = 0.0;

  double statistic(const Vector& t) const {
    const Vector d = t - center;
    return d.dot(M * d);
  }
};

/// Gaussian-identity Wald selection in terms of T = X'y: beta_hat = (X'X)^{-1} T and
/// beta_hat' Sigma^{-1} beta_hat = T' (X'X)^{-1} T / sigma2.
inline GlmSelection glm_wald_selection(const GlmModel& model, double t1) {
  const Matrix xtx = model.X.transpose() * model.X;
  GlmSelection sel;
  sel.M = xtx.ldlt().solve(Matrix::Identity(xtx.rows(), xtx.cols())) / model.sigma2;
  sel.center = Vector::Zero(xtx.rows());
  sel.threshold = chisq_quantile(t1, static_cast<double>(xtx.rows()));
  return sel;
}

/// Metropolis-within-selection sampler for y | selection at beta: observation i is redrawn
/// from its model law and the move is reverted when the selection statistic falls to or below
/// the threshold.
class GlmExactSampler {
 public:
  GlmExactSampler(const GlmModel& model, GlmSelection sel, const Vector& beta, Vector y0, std::uint64_t seed)
      : model_(model), sel_(std::move(sel)), y_(std::move(y0)), gen_(seed) {
    require(model_.X.rows() == y_.size(), "GLM sampler: y has the wrong length");
    require(sel_.M.rows() == model_.X.cols(), "GLM sampler: selection matrix has the wrong dimension");
    mx_ = sel_.M * model_.X.transpose();  // columns M X_i
    xmx_ = (model_.X.transpose().array() * mx_.array()).colwise().sum().transpose();
    t_ = model_.X.transpose() * y_;
    s_ = sel_.statistic(t_);
    if (!(s_ > sel_.threshold)) throw NotSelected("GLM sampler: initial response is not selected");
    set_beta(beta);
  }

  void set_beta(const Vector& beta) {
    require(beta.size() == model_.X.cols(), "GLM sampler: beta has the wrong dimension");
    eta_ = model_.X * beta;
  }

  /// One pass over all observations.
  void sweep() {
    boost::random::normal_distribution<double> norm;
    boost::random::uniform_01<double> unif;
    const double sd = std::sqrt(model_.sigma2);
    Vector d = t_ - sel_.center;
    for (Index i = 0; i < y_.size(); ++i) {
      double yi;
      if (model_.family == GlmFamily::GaussianIdentity) {
        yi = eta_(i) + sd * norm(gen_);
      } else {
        const double p = 1.0 / (1.0 + std::exp(-eta_(i)));
        yi = unif(gen_) < p ? 1.0 : 0.0;
      }
      const double dy = yi - y_(i);
      ++proposals_;
      if (dy == 0.0) {
        ++accepted_;
        continue;
      }
      const double s_new = s_ + 2.0 * dy * mx_.col(i).dot(d) + dy * dy * xmx_(i);
      if (s_new > sel_.threshold) {
        y_(i) = yi;
        d.noalias() += dy * model_.X.row(i).transpose();
        s_ = s_new;
        ++accepted_;
      }
    }
    t_ = d + sel_.center;
    if (++sweeps_ % 50 == 0) {
      t_ = model_.X.transpose() * y_;
      s_ = sel_.statistic(t_);
    }
  }

  const Vector& y() const { return y_; }
  const Vector& sufficient() const { return t_; }
  double statistic() const { return s_; }
  double acceptance() const { return proposals_ ? double(accepted_) / double(proposals_) : kNaN; }

 private:
  const GlmModel& model_;
  GlmSelection sel_;
  Vector y_;
  Rng gen_;
  Matrix mx_;
  Vector xmx_, t_, eta_;
  double s_ = 0.0;
  long proposals_ = 0, accepted_ = 0, sweeps_ = 0;
};

/// count sweeps of the exact sampler at a fixed beta; row r holds y after sweep r.
inline Matrix glm_exact_sampler(const GlmModel& model, const GlmSelection& sel, const Vector& beta, const Vector& y0,
                                Index sweeps, std::uint64_t seed) {
  GlmExactSampler s(model, sel, beta, y0, seed);
  Matrix out(sweeps, y0.size());
  for (Index r = 0; r < sweeps; ++r) {
    s.sweep();
    out.row(r) = s.y().transpose();
  }
  return out;
}

/// Conditional MLE from individual-level data: stochastic approximation on the sufficient
/// statistic, beta += gamma_t I^{-1} (X'y_obs - X'y_t), with I the Fisher information at the
/// unconditional fit and y_t one sweep of the exact sampler at the current iterate.
inline MleResult glm_conditional_mle(const GlmModel& model, const GlmSelection& sel, const Vector& y_obs,
                                     const Vector& beta_start, const SgdOptions& opt = {}) {
  require(opt.steps >= 1000, "GLM MLE: budget must be at least 1000 steps");
  const Matrix& x = model.X;
  Matrix info;
  if (model.family == GlmFamily::GaussianIdentity) {
    info = x.transpose() * x / model.sigma2;
  } else {
    Vector w(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      const double pi = 1.0 / (1.0 + std::exp(-x.row(i).dot(beta_start)));
      w(i) = pi * (1.0 - pi);
    }
    info = x.transpose() * w.asDiagonal() * x;
  }
  Eigen::LDLT<Matrix> pre(info);
  require(pre.info() == Eigen::Success, "GLM MLE: Fisher information is singular");
  GlmExactSampler sampler(model, sel, beta_start, y_obs, derive_seed(opt.seed, {0x676c6d}));
  const Vector t_obs = x.transpose() * y_obs;
  Vector beta = beta_start, avg = Vector::Zero(beta.size());
  const long start_avg = opt.steps - opt.steps / 2;
  MleResult r;
  r.method = "glm-sgd";
  for (long t = 0; t < opt.steps; ++t) {
    sampler.set_beta(beta);
    sampler.sweep();
    const double gamma = opt.a / (opt.b + static_cast<double>(t));
    beta.noalias() += gamma * pre.solve(t_obs - sampler.sufficient());
    if (!beta.allFinite() || beta.norm() > 1e6 * (1.0 + beta_start.norm()))
      throw NumericalFailure("GLM MLE diverged");
    if (t >= start_avg) avg += beta;
    if (t % std::max(1L, opt.steps / 100) == 0) r.trace.push_back(beta.norm());
  }
  r.beta_tilde = avg / static_cast<double>(opt.steps - start_avg);
  r.acceptance = sampler.acceptance();
  return r;
}

}  // namespace postsel

#endif  // POSTSEL_MLE_HPP
