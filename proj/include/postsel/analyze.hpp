#ifndef POSTSEL_ANALYZE_HPP
#define POSTSEL_ANALYZE_HPP

// Every inference for every coordinate of one selected dataset.

#include <map>

#include "postsel/hybrid.hpp"
#include "postsel/mle.hpp"
#include "postsel/multiplicity.hpp"

namespace postsel {

enum class Method { Naive, Poly, Gn, Hybrid, Regime, Mle };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Naive: return "naive";
    case Method::Poly: return "poly";
    case Method::Gn: return "gn";
    case Method::Hybrid: return "hybrid";
    case Method::Regime: return "regime";
    case Method::Mle: return "mle";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::Naive, Method::Poly, Method::Gn, Method::Hybrid, Method::Regime, Method::Mle})
    if (s == to_string(m)) return m;
  throw InvalidInput("unknown method '" + s + "' (expected naive, poly, gn, hybrid, regime or mle)");
}

struct AnalysisOptions {
  double alpha = 0.05;
  double t2 = kNaN;  // NaN: alpha^2 t1
  std::vector<Method> methods{Method::Naive, Method::Poly, Method::Gn, Method::Hybrid, Method::Regime, Method::Mle};
  std::vector<Adjustment> adjustments{Adjustment::BH};
  bool pvalues = true;
  bool intervals = true;
  GnOptions gn{};
  SgdOptions sgd{};

  bool wants(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
};

struct CoordinateInference {
  Index j = 0;
  double beta_hat = kNaN, se = kNaN;
  double p_naive = kNaN, p_poly = kNaN, p_gn = kNaN, p_gn_se = kNaN, p_hybrid = kNaN;
  Interval ci_naive, ci_poly, ci_gn, ci_hybrid, ci_regime;
  bool gn_analytic = false;
  bool gn_converged = true;
  bool hybrid_crossed = false;
  bool regime_crossed = false;
  double mle = kNaN;
  TruncationRegion region = TruncationRegion::full_line();
};

struct InferenceReport {
  Evaluation selection{};
  RegimeDecision regime;
  MleResult mle;
  std::vector<CoordinateInference> coords;
  // adjusted[p-value column][adjustment] -> adjusted values, e.g. adjusted["p_poly"]["bh"]
  std::map<std::string, std::map<std::string, std::vector<double>>> adjusted;
};

/// Runs the requested methods on a selected dataset. Throws NotSelected otherwise.
inline InferenceReport analyze(const SummaryStats& stats, const AggregateTest& test, const AnalysisOptions& opt) {
  require(test.dim() == stats.dim(), "analyze: test and statistics differ in dimension");
  require(opt.alpha > 0.0 && opt.alpha < 1.0, "alpha must lie in (0, 1)");
  InferenceReport rep;
  rep.selection = evaluate(test, stats);
  if (!rep.selection.selected) throw NotSelected("the aggregate test did not select these data");
  const Index m = stats.dim();
  const bool need_poly = opt.wants(Method::Poly) || opt.wants(Method::Hybrid) || opt.wants(Method::Regime);
  const bool need_gn = opt.wants(Method::Gn) || opt.wants(Method::Hybrid) || opt.wants(Method::Regime);
  if (opt.wants(Method::Regime)) rep.regime = regime_decision(stats, test, opt.alpha, opt.t2);

  std::vector<GnPValue> gn;
  if (need_gn && opt.pvalues) gn = gn_pvalues(stats, test, opt.gn);

  rep.coords.resize(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    CoordinateInference& c = rep.coords[static_cast<std::size_t>(j)];
    c.j = j;
    c.beta_hat = stats.beta_hat(j);
    c.se = stats.se(j);
    c.p_naive = naive_pvalue(c.beta_hat, c.se);
    if (opt.intervals) c.ci_naive = naive_ci(c.beta_hat, c.se, opt.alpha);
    ContrastDecomposition d;
    if (need_poly) {
      d = truncation(stats, test, j);
      c.region = d.region;
      if (opt.pvalues) c.p_poly = polyhedral_pvalue(d);
      if (opt.intervals && opt.wants(Method::Poly)) c.ci_poly = polyhedral_ci(d, opt.alpha);
    }
    if (need_gn && opt.pvalues) {
      const GnPValue& g = gn[static_cast<std::size_t>(j)];
      c.p_gn = g.value;
      c.p_gn_se = g.se;
      c.gn_analytic = g.analytic;
    }
    GnOptions gopt = opt.gn;
    gopt.seed = derive_seed(opt.gn.seed, {0x6369, std::uint64_t(j)});
    if (opt.intervals && opt.wants(Method::Gn)) {
      GnInterval gi = gn_ci(stats, test, j, opt.alpha, gopt);
      c.ci_gn = gi.ci;
      c.gn_converged = c.gn_converged && gi.converged;
    }
    if (need_poly && need_gn && opt.pvalues) c.p_hybrid = hybrid_pvalue(c.p_poly, c.p_gn);
    if (opt.intervals && opt.wants(Method::Hybrid)) {
      GnInterval gi = gn_ci(stats, test, j, 0.5 * opt.alpha, gopt);
      c.gn_converged = c.gn_converged && gi.converged;
      HybridInterval h = hybrid_ci(polyhedral_ci(d, 0.5 * opt.alpha), gi.ci);
      c.ci_hybrid = h.ci;
      c.hybrid_crossed = h.crossed;
    }
    if (opt.intervals && opt.wants(Method::Regime)) {
      if (rep.regime.regime == Regime::Unconditional) {
        c.ci_regime = naive_ci(c.beta_hat, c.se, opt.alpha);
      } else {
        const double a = 0.5 * rep.regime.alpha_star;
        GnInterval gi = gn_ci(stats, test, j, a, gopt);
        c.gn_converged = c.gn_converged && gi.converged;
        HybridInterval h = hybrid_ci(polyhedral_ci(d, a), gi.ci);
        c.ci_regime = h.ci;
        c.regime_crossed = h.crossed;
      }
    }
  }

  if (opt.wants(Method::Mle)) {
    rep.mle = conditional_mle(stats, test, opt.sgd);
    for (Index j = 0; j < m; ++j) rep.coords[static_cast<std::size_t>(j)].mle = rep.mle.beta_tilde(j);
  }

  auto column = [&](double CoordinateInference::*field) {
    std::vector<double> v;
    for (const auto& c : rep.coords) v.push_back(c.*field);
    return v;
  };
  std::vector<std::pair<std::string, double CoordinateInference::*>> cols{{"p_naive", &CoordinateInference::p_naive}};
  if (!opt.pvalues) return rep;
  if (need_poly) cols.push_back({"p_poly", &CoordinateInference::p_poly});
  if (need_gn) cols.push_back({"p_gn", &CoordinateInference::p_gn});
  if (need_poly && need_gn) cols.push_back({"p_hybrid", &CoordinateInference::p_hybrid});
  for (const auto& [name, field] : cols)
    for (Adjustment a : opt.adjustments) rep.adjusted[name][to_string(a)] = adjust(column(field), a);
  return rep;
}

}  // namespace postsel

#endif  // POSTSEL_ANALYZE_HPP
