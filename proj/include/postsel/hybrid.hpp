#ifndef POSTSEL_HYBRID_HPP
#define POSTSEL_HYBRID_HPP

// Combining polyhedral and global-null inference, and the regime-switching interval
// that falls back to the unconditional interval when the aggregate test is far past
// a stricter threshold.

#include "postsel/globalnull.hpp"

namespace postsel {

inline double hybrid_pvalue(double p_poly, double p_gn) {
  require(p_poly >= 0.0 && p_poly <= 1.0 && p_gn >= 0.0 && p_gn <= 1.0, "hybrid p-value: inputs must lie in [0, 1]");
  return std::min(1.0, 2.0 * std::min(p_poly, p_gn));
}

struct HybridInterval {
  Interval ci;
  bool crossed = false;  // the two inputs did not overlap; ci is the midpoint of the gap
};

/// Intersection of the polyhedral and global-null intervals, each computed at half the level.
inline HybridInterval hybrid_ci(const Interval& poly_half, const Interval& gn_half) {
  HybridInterval out;
  out.ci = {std::max(poly_half.lo, gn_half.lo), std::min(poly_half.hi, gn_half.hi)};
  if (out.ci.lo > out.ci.hi) {
    const double mid = 0.5 * (out.ci.lo + out.ci.hi);
    out.ci = {mid, mid};
    out.crossed = true;
  }
  return out;
}

enum class Regime { Conditional, Unconditional };

inline const char* to_string(Regime r) { return r == Regime::Conditional ? "conditional" : "unconditional"; }

struct RegimeDecision {
  Regime regime = Regime::Conditional;
  double t1 = kNaN;          // selection level (computed for explicit linear bounds)
  double t2 = kNaN;          // switching level
  double alpha = kNaN;
  double alpha_star = kNaN;  // level used by the conditional branch: alpha - t2 / t1
  double statistic = kNaN;
  double stricter_threshold = kNaN;  // upper t2 quantile of the statistic (quadratic tests)
};

/// Decides the regime once per dataset. t2 defaults to alpha^2 t1 (pass NaN).
inline RegimeDecision regime_decision(const SummaryStats& stats, const AggregateTest& test, double alpha, double t2 = kNaN) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  RegimeDecision d;
  d.alpha = alpha;
  d.t1 = null_selection_probability(test, stats.Sigma);
  d.t2 = std::isnan(t2) ? alpha * alpha * d.t1 : t2;
  require(d.t2 > 0.0 && d.t2 < alpha * d.t1, "regime switch: need 0 < t2 < alpha * t1");
  d.alpha_star = alpha - d.t2 / d.t1;
  const Evaluation ev = evaluate(test, stats);
  require(ev.selected, "regime switch: the data were not selected");
  d.statistic = ev.statistic;
  if (test.is_quadratic()) {
    const QuadraticTest& q = test.quadratic();
    d.stricter_threshold = (q.wald && q.null_law.size() == stats.dim())
                               ? chisq_quantile(d.t2, static_cast<double>(stats.dim()))
                               : quadform_quantile(d.t2, q.null_law);
    d.regime = ev.statistic >= d.stricter_threshold ? Regime::Unconditional : Regime::Conditional;
  } else {
    d.regime = aggregate_pvalue(test, stats.Sigma, ev.statistic) <= d.t2 ? Regime::Unconditional : Regime::Conditional;
  }
  return d;
}

struct RegimeInterval {
  Interval ci;
  Regime regime = Regime::Conditional;
  double alpha_star = kNaN;
  bool crossed = false;
};

/// Naive interval at level 1 - alpha in the unconditional regime, otherwise the hybrid
/// interval at level 1 - alpha_star.
inline RegimeInterval regime_switch_ci(const SummaryStats& stats, const AggregateTest& test, Index j, double alpha,
                                       double t2 = kNaN, const GnOptions& opt = {}) {
  const RegimeDecision d = regime_decision(stats, test, alpha, t2);
  RegimeInterval out;
  out.regime = d.regime;
  out.alpha_star = d.alpha_star;
  if (d.regime == Regime::Unconditional) {
    out.ci = naive_ci(stats.beta_hat(j), stats.se(j), alpha);
    return out;
  }
  const Interval poly = polyhedral_ci(truncation(stats, test, j), 0.5 * d.alpha_star);
  const Interval gn = gn_ci(stats, test, j, 0.5 * d.alpha_star, opt).ci;
  const HybridInterval h = hybrid_ci(poly, gn);
  out.ci = h.ci;
  out.crossed = h.crossed;
  return out;
}

}  // namespace postsel

#endif  // POSTSEL_HYBRID_HPP
