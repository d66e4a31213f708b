#ifndef POSTSEL_POLYHEDRAL_HPP
#define POSTSEL_POLYHEDRAL_HPP

// Inference for a contrast eta' beta_hat conditional on the selection event and
// on the part of beta_hat orthogonal to it, W = (I - c eta') beta_hat.

#include "postsel/selection.hpp"

namespace postsel {

enum class Sided { TwoSided, Greater, Less };

struct ContrastDecomposition {
  Vector eta;
  Vector c;  // Sigma eta / (eta' Sigma eta)
  Vector W;
  double sigma_eta2 = kNaN;
  double observed = kNaN;  // eta' beta_hat
  TruncationRegion region = TruncationRegion::full_line();
};

inline ContrastDecomposition decompose_contrast(const SummaryStats& stats, const Vector& eta) {
  require(eta.size() == stats.dim(), "contrast has the wrong dimension");
  ContrastDecomposition d;
  d.eta = eta;
  const Vector se = stats.Sigma * eta;
  d.sigma_eta2 = eta.dot(se);
  require(d.sigma_eta2 > 0.0, "contrast has zero variance");
  d.c = se / d.sigma_eta2;
  d.observed = eta.dot(stats.beta_hat);
  d.W = stats.beta_hat - d.c * d.observed;
  return d;
}

inline Vector unit_vector(Index m, Index j) {
  Vector e = Vector::Zero(m);
  e(j) = 1.0;
  return e;
}

/// Set of t with (W + c t)' K (W + c t) > threshold, given W'KW, W'Kc and c'Kc.
/// Throws NotSelected when the quadratic does not involve t and W alone fails the test.
inline TruncationRegion quadratic_region(double wkw, double wkc, double ckc, double threshold, double t_scale) {
  if (threshold <= 0.0) return TruncationRegion::full_line();
  if (ckc * t_scale * t_scale <= 1e-12 * std::max({threshold, std::abs(wkw), 1e-300})) {
    if (wkw > threshold) return TruncationRegion::full_line();
    throw NotSelected("selection is incompatible with W: the statistic does not depend on the contrast");
  }
  double delta = 4.0 * (wkc * wkc - ckc * (wkw - threshold));
  const double tol = 1e-12 * std::max(1.0, wkc * wkc);
  if (delta < 0.0 && delta >= -tol) delta = 0.0;
  if (delta <= 0.0) return TruncationRegion::full_line();
  const double root = std::sqrt(delta);
  return TruncationRegion::exterior((-2.0 * wkc - root) / (2.0 * ckc), (-2.0 * wkc + root) / (2.0 * ckc));
}

/// Set of t with a'W + (a'c) t outside (l, u).
inline TruncationRegion linear_region(double aw, double ac, const LinearTest& test, double t_scale) {
  if (test.untruncated()) return TruncationRegion::full_line();
  if (std::abs(ac) * t_scale <= 1e-12 * test.sd) {
    if (aw < test.l || aw > test.u) return TruncationRegion::full_line();
    throw NotSelected("selection is incompatible with W: a' beta_hat does not depend on the contrast");
  }
  double lo = (test.l - aw) / ac, hi = (test.u - aw) / ac;
  if (ac < 0.0) std::swap(lo, hi);
  return TruncationRegion::exterior(lo, hi);
}

inline ContrastDecomposition truncation_quadratic(const SummaryStats& stats, const QuadraticTest& test, const Vector& eta) {
  ContrastDecomposition d = decompose_contrast(stats, eta);
  const Vector kc = test.K * d.c;
  d.region = quadratic_region(d.W.dot(test.K * d.W), d.W.dot(kc), d.c.dot(kc), test.threshold, std::sqrt(d.sigma_eta2));
  return d;
}

inline ContrastDecomposition truncation_linear(const SummaryStats& stats, const LinearTest& test, const Vector& eta) {
  ContrastDecomposition d = decompose_contrast(stats, eta);
  d.region = linear_region(test.a.dot(d.W), test.a.dot(d.c), test, std::sqrt(d.sigma_eta2));
  return d;
}

inline ContrastDecomposition truncation(const SummaryStats& stats, const AggregateTest& test, const Vector& eta) {
  require(test.dim() == stats.dim(), "truncation: test and statistics differ in dimension");
  if (test.is_quadratic()) return truncation_quadratic(stats, test.quadratic(), eta);
  return truncation_linear(stats, test.linear(), eta);
}

inline ContrastDecomposition truncation(const SummaryStats& stats, const AggregateTest& test, Index j) {
  require(j >= 0 && j < stats.dim(), "coordinate index out of range");
  return truncation(stats, test, unit_vector(stats.dim(), j));
}

inline double naive_pvalue(double estimate, double se, double null_value = 0.0) {
  return std::min(1.0, 2.0 * normal_tail(std::abs(estimate - null_value) / se));
}

inline Interval naive_ci(double estimate, double se, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  const double z = normal_upper_quantile(0.5 * alpha);
  return {estimate - z * se, estimate + z * se};
}

inline double polyhedral_pvalue(const ContrastDecomposition& d, double null_value = 0.0, Sided sided = Sided::TwoSided) {
  const double sd = std::sqrt(d.sigma_eta2);
  if (!d.region.contains(d.observed, 1e-9 * sd))
    throw NotSelected("observed contrast lies outside its truncation region");
  switch (sided) {
    case Sided::Greater: return truncnorm_sf(d.observed, null_value, d.sigma_eta2, d.region);
    case Sided::Less: return truncnorm_cdf(d.observed, null_value, d.sigma_eta2, d.region);
    case Sided::TwoSided: break;
  }
  const double f = truncnorm_cdf(d.observed, null_value, d.sigma_eta2, d.region);
  const double s = truncnorm_sf(d.observed, null_value, d.sigma_eta2, d.region);
  return std::min(1.0, 2.0 * std::min(f, s));
}

/// Equal-tailed interval from inverting the truncated-normal CDF in its mean.
inline Interval polyhedral_ci(const ContrastDecomposition& d, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  const double sd = std::sqrt(d.sigma_eta2);
  const double x = d.observed;
  const double tol = 1e-10 * sd;
  // F_b(x) decreases in b. Work with the smaller of F and 1 - F for accuracy.
  auto lower = [&](double b) { return truncnorm_sf(x, b, d.sigma_eta2, d.region) - 0.5 * alpha; };
  auto upper = [&](double b) { return truncnorm_cdf(x, b, d.sigma_eta2, d.region) - 0.5 * alpha; };
  Interval ci;
  ci.lo = monotone_root(lower, true, x, sd, tol);
  ci.hi = monotone_root(upper, false, x, sd, tol);
  if (ci.lo > ci.hi) std::swap(ci.lo, ci.hi);
  return ci;
}

}  // namespace postsel

#endif  // POSTSEL_POLYHEDRAL_HPP
