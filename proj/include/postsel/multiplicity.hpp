#ifndef POSTSEL_MULTIPLICITY_HPP
#define POSTSEL_MULTIPLICITY_HPP

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "postsel/common.hpp"

namespace postsel {

enum class Adjustment { Holm, BH, BY, Bonferroni };

inline const char* to_string(Adjustment a) {
  switch (a) {
    case Adjustment::Holm: return "holm";
    case Adjustment::BH: return "bh";
    case Adjustment::BY: return "by";
    case Adjustment::Bonferroni: return "bonferroni";
  }
  return "?";
}

inline Adjustment parse_adjustment(const std::string& s) {
  if (s == "holm") return Adjustment::Holm;
  if (s == "bh" || s == "fdr") return Adjustment::BH;
  if (s == "by") return Adjustment::BY;
  if (s == "bonferroni") return Adjustment::Bonferroni;
  throw InvalidInput("unknown adjustment '" + s + "' (expected holm, bh, by or bonferroni)");
}

namespace detail {

inline std::vector<std::size_t> ascending_order(const std::vector<double>& p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  return idx;
}

inline void check_pvalues(const std::vector<double>& p) {
  for (double v : p) require(v >= 0.0 && v <= 1.0, "p-values must lie in [0, 1]");
}

inline std::vector<double> step_up(const std::vector<double>& p, double factor) {
  check_pvalues(p);
  const std::size_t m = p.size();
  std::vector<double> out(m);
  const auto idx = ascending_order(p);
  double run = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    // multiply by the ratio so the adjusted value can never round below the raw one
    const double v = std::min(1.0, p[idx[k]] * (factor * static_cast<double>(m) / static_cast<double>(k + 1)));
    run = std::min(run, v);
    out[idx[k]] = run;
  }
  return out;
}

}  // namespace detail

// Step-down Holm adjustment.
inline std::vector<double> holm_adjust(const std::vector<double>& p) {
  detail::check_pvalues(p);
  const std::size_t m = p.size();
  std::vector<double> out(m);
  const auto idx = detail::ascending_order(p);
  double run = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    run = std::max(run, std::min(1.0, static_cast<double>(m - k) * p[idx[k]]));
    out[idx[k]] = run;
  }
  return out;
}

// Benjamini-Hochberg step-up adjustment.
inline std::vector<double> bh_adjust(const std::vector<double>& p) { return detail::step_up(p, 1.0); }

// Benjamini-Yekutieli: BH with the harmonic factor 1 + 1/2 + ... + 1/m.
inline std::vector<double> by_adjust(const std::vector<double>& p) {
  double h = 0.0;
  for (std::size_t i = 1; i <= p.size(); ++i) h += 1.0 / static_cast<double>(i);
  return detail::step_up(p, h);
}

inline std::vector<double> bonferroni_adjust(const std::vector<double>& p) {
  detail::check_pvalues(p);
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::min(1.0, static_cast<double>(p.size()) * p[i]);
  return out;
}

inline std::vector<double> adjust(const std::vector<double>& p, Adjustment method) {
  switch (method) {
    case Adjustment::Holm: return holm_adjust(p);
    case Adjustment::BH: return bh_adjust(p);
    case Adjustment::BY: return by_adjust(p);
    case Adjustment::Bonferroni: return bonferroni_adjust(p);
  }
  return p;
}

struct AdjustedDecisions {
  std::vector<double> raw;
  std::vector<double> adjusted;
  std::vector<bool> rejected;
  Adjustment method = Adjustment::BH;
  double alpha = 0.05;

  std::size_t rejections() const { return static_cast<std::size_t>(std::count(rejected.begin(), rejected.end(), true)); }
};

inline AdjustedDecisions decide(const std::vector<double>& p, Adjustment method, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  AdjustedDecisions d{p, adjust(p, method), {}, method, alpha};
  d.rejected.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) d.rejected[i] = d.adjusted[i] <= alpha;
  return d;
}

// False discovery proportion V / max(R, 1) given which hypotheses are truly null.
inline double false_discovery_proportion(const std::vector<bool>& rejected, const std::vector<bool>& is_null) {
  require(rejected.size() == is_null.size(), "false_discovery_proportion: length mismatch");
  std::size_t v = 0, r = 0;
  for (std::size_t i = 0; i < rejected.size(); ++i) {
    r += rejected[i];
    v += rejected[i] && is_null[i];
  }
  return static_cast<double>(v) / static_cast<double>(std::max<std::size_t>(r, 1));
}

}  // namespace postsel

#endif  // POSTSEL_MULTIPLICITY_HPP
