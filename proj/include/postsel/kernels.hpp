#ifndef POSTSEL_KERNELS_HPP
#define POSTSEL_KERNELS_HPP

// Probability kernels shared by every inference routine: normal tails in log
// space, truncated normals over unions of rays, the law of a weighted sum of
// noncentral chi-squares, and multivariate normal sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/math/tools/toms748_solve.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "postsel/common.hpp"

namespace postsel {

inline constexpr double kSqrt2 = 1.41421356237309504880;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Standard normal tails
// ---------------------------------------------------------------------------

namespace detail {

// Continued fraction for the Mills ratio Q(z)/phi(z), z >= 8.
inline double mills_ratio(double z) {
  double f = z;
  for (int k = 60; k >= 1; --k) f = z + k / f;
  return 1.0 / f;
}

// log(1 - exp(x)) for x <= 0.
inline double log1mexp(double x) {
  if (x == -kInf) return 0.0;
  if (x > -0.6931471805599453) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

inline double logsumexp(std::span<const double> xs) {
  double mx = -kInf;
  for (double x : xs) mx = std::max(mx, x);
  if (mx == -kInf) return -kInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace detail

inline double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

/// log P(Z >= z) for a standard normal Z.
inline double log_normal_tail(double z) {
  if (std::isnan(z)) return kNaN;
  if (z == kInf) return -kInf;
  if (z == -kInf) return 0.0;
  if (z >= 8.0) return log_normal_pdf(z) + std::log(detail::mills_ratio(z));
  if (z < -5.0) return std::log1p(-0.5 * std::erfc(-z / kSqrt2));
  return std::log(0.5 * std::erfc(z / kSqrt2));
}

/// P(Z >= z) for a standard normal Z.
inline double normal_tail(double z) {
  if (z > 37.0) return std::exp(log_normal_tail(z));
  return 0.5 * std::erfc(z / kSqrt2);
}

inline double normal_cdf(double z) { return normal_tail(-z); }

/// z such that P(Z >= z) = q.
inline double normal_upper_quantile(double q) {
  if (q <= 0.0) return kInf;
  if (q >= 1.0) return -kInf;
  return kSqrt2 * boost::math::erfc_inv(2.0 * q);
}

/// z such that P(Z <= z) = p.
inline double normal_quantile(double p) { return -normal_upper_quantile(p); }

/// Inverse of log_normal_tail for log-tail values beyond the reach of erfc_inv.
inline double normal_upper_quantile_log(double log_q) {
  if (log_q > -690.0) return normal_upper_quantile(std::exp(log_q));
  double z = std::sqrt(-2.0 * log_q);
  for (int it = 0; it < 50; ++it) {
    double f = log_normal_tail(z) - log_q;
    // d/dz log Q(z) = -phi(z)/Q(z) = -1/mills(z)
    double step = f * detail::mills_ratio(z);
    z += step;
    if (std::abs(step) < 1e-14 * z) break;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Truncation regions
// ---------------------------------------------------------------------------

enum class RegionKind { FullLine, LowerRay, UpperRay, Interval, TwoRayExterior };

inline const char* to_string(RegionKind k) {
  switch (k) {
    case RegionKind::FullLine: return "full-line";
    case RegionKind::LowerRay: return "lower-ray";
    case RegionKind::UpperRay: return "upper-ray";
    case RegionKind::Interval: return "interval";
    case RegionKind::TwoRayExterior: return "two-ray-exterior";
  }
  return "?";
}

struct Segment {
  double lo;
  double hi;
};

/// Subset of the real line made of at most two disjoint closed segments.
/// For the exterior kind, b() is the upper end of the lower ray and a() the
/// lower end of the upper ray.
class TruncationRegion {
 public:
  static TruncationRegion full_line() { return TruncationRegion(RegionKind::FullLine, {{-kInf, kInf}}, 1); }
  static TruncationRegion lower_ray(double b) {
    require(!std::isnan(b), "lower_ray: NaN bound");
    if (b == kInf) return full_line();
    return TruncationRegion(RegionKind::LowerRay, {{-kInf, b}}, 1);
  }
  static TruncationRegion upper_ray(double a) {
    require(!std::isnan(a), "upper_ray: NaN bound");
    if (a == -kInf) return full_line();
    return TruncationRegion(RegionKind::UpperRay, {{a, kInf}}, 1);
  }
  static TruncationRegion interval(double lo, double hi) {
    require(lo < hi, "interval: need lo < hi");
    if (lo == -kInf) return lower_ray(hi);
    if (hi == kInf) return upper_ray(lo);
    return TruncationRegion(RegionKind::Interval, {{lo, hi}}, 1);
  }
  /// (-inf, b] U [a, inf); collapses to a single ray or the full line when a bound is infinite or b >= a.
  static TruncationRegion exterior(double b, double a) {
    require(!std::isnan(a) && !std::isnan(b), "exterior: NaN bound");
    if (b >= a) return full_line();
    if (b == -kInf) return upper_ray(a);
    if (a == kInf) return lower_ray(b);
    return TruncationRegion(RegionKind::TwoRayExterior, {{{-kInf, b}, {a, kInf}}}, 2);
  }

  RegionKind kind() const { return kind_; }
  std::span<const Segment> segments() const { return {segs_.data(), count_}; }

  /// Upper end of the lower branch (+inf for the full line, NaN when there is no lower branch).
  double b() const {
    switch (kind_) {
      case RegionKind::FullLine: return kInf;
      case RegionKind::LowerRay:
      case RegionKind::TwoRayExterior: return segs_[0].hi;
      default: return kNaN;
    }
  }
  /// Lower end of the upper branch (-inf for the full line, NaN when there is no upper branch).
  double a() const {
    switch (kind_) {
      case RegionKind::FullLine: return -kInf;
      case RegionKind::UpperRay: return segs_[0].lo;
      case RegionKind::TwoRayExterior: return segs_[1].lo;
      default: return kNaN;
    }
  }

  bool contains(double x, double tol = 0.0) const {
    for (const Segment& s : segments())
      if (x >= s.lo - tol && x <= s.hi + tol) return true;
    return false;
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind_);
    for (const Segment& s : segments()) os << " [" << s.lo << ", " << s.hi << "]";
    return os.str();
  }

 private:
  TruncationRegion(RegionKind k, std::array<Segment, 2> s, std::size_t n) : kind_(k), segs_(s), count_(n) {}

  RegionKind kind_;
  std::array<Segment, 2> segs_;
  std::size_t count_;
};

// ---------------------------------------------------------------------------
// Truncated normal
// ---------------------------------------------------------------------------

namespace detail {

/// log(Phi(hi) - Phi(lo)) for standardized bounds, stable in both tails.
inline double log_std_mass(double lo, double hi) {
  if (!(hi > lo)) return -kInf;
  if (lo >= 0.0) {
    double la = log_normal_tail(lo), lb = log_normal_tail(hi);
    return la + log1mexp(lb - la);
  }
  if (hi <= 0.0) {
    double la = log_normal_tail(-hi), lb = log_normal_tail(-lo);
    return la + log1mexp(lb - la);
  }
  return std::log1p(-(normal_tail(-lo) + normal_tail(hi)));
}

inline double standardize(double v, double mu, double sd) {
  if (std::isinf(v)) return v;
  return (v - mu) / sd;
}

struct SplitMass {
  double log_below;  // log P(X <= x, X in region)
  double log_above;  // log P(X >= x, X in region)
};

inline SplitMass split_mass(double x, double mu, double sigma2, const TruncationRegion& region) {
  require(sigma2 > 0.0, "truncated normal: variance must be positive");
  const double sd = std::sqrt(sigma2);
  std::array<double, 2> below{-kInf, -kInf}, above{-kInf, -kInf};
  std::size_t k = 0;
  for (const Segment& s : region.segments()) {
    double lo = standardize(s.lo, mu, sd), hi = standardize(s.hi, mu, sd);
    double z = standardize(x, mu, sd);
    below[k] = log_std_mass(lo, std::min(hi, z));
    above[k] = log_std_mass(std::max(lo, z), hi);
    ++k;
  }
  SplitMass out{logsumexp(std::span<const double>(below.data(), k)),
                logsumexp(std::span<const double>(above.data(), k))};
  if (out.log_below == -kInf && out.log_above == -kInf)
    throw NumericalFailure("truncated normal: region mass underflows (" + region.describe() + ")");
  return out;
}

}  // namespace detail

/// log of the Gaussian mass N(mu, sigma2) assigns to the region.
inline double region_log_mass(double mu, double sigma2, const TruncationRegion& region) {
  require(sigma2 > 0.0, "region_log_mass: variance must be positive");
  const double sd = std::sqrt(sigma2);
  std::array<double, 2> m{-kInf, -kInf};
  std::size_t k = 0;
  for (const Segment& s : region.segments())
    m[k++] = detail::log_std_mass(detail::standardize(s.lo, mu, sd), detail::standardize(s.hi, mu, sd));
  return detail::logsumexp(std::span<const double>(m.data(), k));
}

/// P(X <= x | X in region) for X ~ N(mu, sigma2).
inline double truncnorm_cdf(double x, double mu, double sigma2, const TruncationRegion& region) {
  auto m = detail::split_mass(x, mu, sigma2, region);
  if (m.log_below == -kInf) return 0.0;
  if (m.log_above == -kInf) return 1.0;
  return 1.0 / (1.0 + std::exp(m.log_above - m.log_below));
}

/// P(X >= x | X in region); accurate when the CDF is close to one.
inline double truncnorm_sf(double x, double mu, double sigma2, const TruncationRegion& region) {
  auto m = detail::split_mass(x, mu, sigma2, region);
  if (m.log_above == -kInf) return 0.0;
  if (m.log_below == -kInf) return 1.0;
  return 1.0 / (1.0 + std::exp(m.log_below - m.log_above));
}

namespace detail {

struct SegmentPick {
  std::size_t index;
  double fraction;  // position of the target inside the segment, in mass units
};

inline SegmentPick pick_segment(double p, double mu, double sd, const TruncationRegion& region) {
  std::array<double, 2> lm{-kInf, -kInf};
  std::size_t n = 0;
  for (const Segment& s : region.segments())
    lm[n++] = log_std_mass(standardize(s.lo, mu, sd), standardize(s.hi, mu, sd));
  double total = logsumexp(std::span<const double>(lm.data(), n));
  if (total == -kInf) throw NumericalFailure("truncated normal: region mass underflows (" + region.describe() + ")");
  double cum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double w = std::exp(lm[k] - total);
    if (w <= 0.0) continue;
    if (p <= cum + w * (1.0 + 1e-15) || k + 1 == n) return {k, std::clamp((p - cum) / w, 0.0, 1.0)};
    cum += w;
  }
  return {n - 1, 1.0};
}

/// Point x in standardized [lo, hi] with P(lo <= Z <= x) = r * P(lo <= Z <= hi).
inline double invert_std_segment(double lo, double hi, double r) {
  if (r <= 0.0) return lo;
  if (r >= 1.0) return hi;
  if (hi <= 0.0) return -invert_std_segment(-hi, -lo, 1.0 - r);
  if (lo >= 0.0) {
    double la = log_normal_tail(lo), lb = log_normal_tail(hi);
    // log Q(x) = log(Q(lo) - r (Q(lo) - Q(hi)))
    double lq = la + std::log1p(-r * -std::expm1(lb - la));
    return std::clamp(normal_upper_quantile_log(lq), lo, hi);
  }
  double plo = normal_cdf(lo), phi = normal_cdf(hi);
  return std::clamp(normal_quantile(plo + r * (phi - plo)), lo, hi);
}

}  // namespace detail

/// x with truncnorm_cdf(x) = p. Ties at a gap between segments resolve to the lower segment.
inline double truncnorm_quantile(double p, double mu, double sigma2, const TruncationRegion& region) {
  require(p > 0.0 && p < 1.0, "truncnorm_quantile: p must lie in (0, 1)");
  require(sigma2 > 0.0, "truncnorm_quantile: variance must be positive");
  const double sd = std::sqrt(sigma2);
  auto pick = detail::pick_segment(p, mu, sd, region);
  const Segment& seg = region.segments()[pick.index];
  double lo = detail::standardize(seg.lo, mu, sd), hi = detail::standardize(seg.hi, mu, sd);
  double x = mu + sd * detail::invert_std_segment(lo, hi, pick.fraction);
  // Newton polish against the full CDF; the direct inversion can lose digits in far tails.
  for (int it = 0; it < 4; ++it) {
    auto m = detail::split_mass(x, mu, sigma2, region);
    double total = detail::logsumexp(std::array<double, 2>{m.log_below, m.log_above});
    double f = 1.0 / (1.0 + std::exp(m.log_above - m.log_below));
    double err = f - p;
    if (std::abs(err) < 1e-14) break;
    double log_dens = log_normal_pdf((x - mu) / sd) - std::log(sd) - total;
    if (!std::isfinite(log_dens)) break;
    double nx = x - err / std::exp(log_dens);
    if (!std::isfinite(nx) || !region.contains(nx)) break;
    x = nx;
  }
  return x;
}

namespace detail {

/// Draw from the standard normal restricted to [lo, hi] with lo >= 0.
template <class Gen>
double sample_std_upper(double lo, double hi, Gen& gen) {
  boost::random::uniform_01<double> unif;
  if (lo < 5.0) {
    double ql = normal_tail(lo), qh = normal_tail(hi);
    double q = ql - unif(gen) * (ql - qh);
    return std::clamp(normal_upper_quantile(q), lo, hi);
  }
  // Exponential proposal with the optimal rate for a far tail, truncated to [lo, hi].
  const double lambda = 0.5 * (lo + std::sqrt(lo * lo + 4.0));
  const double width_mass = std::isinf(hi) ? 1.0 : -std::expm1(-lambda * (hi - lo));
  for (;;) {
    double u = unif(gen);
    double x = lo - std::log1p(-u * width_mass) / lambda;
    if (x > hi) continue;
    if (unif(gen) <= std::exp(-0.5 * sqr(x - lambda))) return x;
  }
}

template <class Gen>
double sample_std_segment(double lo, double hi, Gen& gen) {
  if (hi <= 0.0) return -sample_std_upper(-hi, -lo, gen);
  if (lo >= 0.0) return sample_std_upper(lo, hi, gen);
  boost::random::uniform_01<double> unif;
  double plo = normal_cdf(lo), phi = normal_cdf(hi);
  return std::clamp(normal_quantile(plo + unif(gen) * (phi - plo)), lo, hi);
}

}  // namespace detail

/// One draw from N(mu, sigma2) conditioned on the region.
template <class Gen>
double sample_truncnorm(double mu, double sigma2, const TruncationRegion& region, Gen& gen) {
  const double sd = std::sqrt(sigma2);
  std::array<double, 2> lm{-kInf, -kInf};
  std::size_t n = 0;
  for (const Segment& s : region.segments())
    lm[n++] = detail::log_std_mass(detail::standardize(s.lo, mu, sd), detail::standardize(s.hi, mu, sd));
  std::size_t k = 0;
  if (n == 2) {
    double top = std::max(lm[0], lm[1]);
    if (top == -kInf) throw NumericalFailure("sample_truncnorm: region mass underflows");
    double w0 = std::exp(lm[0] - top), w1 = std::exp(lm[1] - top);
    boost::random::uniform_01<double> unif;
    k = unif(gen) * (w0 + w1) < w0 ? 0 : 1;
  } else if (lm[0] == -kInf) {
    throw NumericalFailure("sample_truncnorm: region mass underflows");
  }
  const Segment& s = region.segments()[k];
  return mu + sd * detail::sample_std_segment(detail::standardize(s.lo, mu, sd), detail::standardize(s.hi, mu, sd), gen);
}

// ---------------------------------------------------------------------------
// Chi-square helpers
// ---------------------------------------------------------------------------

/// P(chi2_dof(ncp) > y). dof = 0 with ncp = 0 is the point mass at zero.
inline double chisq_sf(double y, double dof, double ncp = 0.0) {
  if (y <= 0.0) return 1.0;
  if (dof <= 0.0 && ncp <= 0.0) return 0.0;
  if (ncp <= 0.0) return boost::math::gamma_q(0.5 * dof, 0.5 * y);
  boost::math::non_central_chi_squared dist(dof, ncp);
  return boost::math::cdf(boost::math::complement(dist, y));
}

inline double chisq_quantile(double upper_tail, double dof) {
  require(upper_tail > 0.0 && upper_tail <= 1.0, "chisq_quantile: tail must lie in (0, 1]");
  if (upper_tail >= 1.0) return 0.0;
  return 2.0 * boost::math::gamma_q_inv(0.5 * dof, upper_tail);
}

// ---------------------------------------------------------------------------
// Quadratic forms in normal variables
// ---------------------------------------------------------------------------

/// Law of sum_i w_i (Z_i + d_i)^2 with Z_i iid standard normal.
struct QuadFormSpec {
  Vector weights;
  Vector noncentrality;  // per-eigendirection means d_i; empty means all zero

  Index size() const { return weights.size(); }
  double mean_shift(Index i) const { return noncentrality.size() ? noncentrality(i) : 0.0; }

  void validate() const {
    require(weights.size() > 0, "QuadFormSpec: no weights");
    require(noncentrality.size() == 0 || noncentrality.size() == weights.size(),
            "QuadFormSpec: noncentrality length mismatch");
    require((weights.array() >= 0.0).all(), "QuadFormSpec: weights must be nonnegative");
    require(weights.maxCoeff() > 0.0, "QuadFormSpec: at least one weight must be positive");
  }
};

struct McEstimate {
  double value;
  double se;
};

namespace detail {

class ImhofIntegrand {
 public:
  ImhofIntegrand(const QuadFormSpec& spec, double s) : s_(s) {
    for (Index i = 0; i < spec.size(); ++i) {
      if (spec.weights(i) <= 0.0) continue;
      lam_.push_back(spec.weights(i));
      d2_.push_back(sqr(spec.mean_shift(i)));
    }
  }

  double theta(double u) const {
    double t = 0.0;
    for (std::size_t i = 0; i < lam_.size(); ++i) {
      double lu = lam_[i] * u;
      t += std::atan(lu) + d2_[i] * lu / (1.0 + lu * lu);
    }
    return 0.5 * t - 0.5 * s_ * u;
  }

  double log_rho(double u) const {
    double r = 0.0;
    for (std::size_t i = 0; i < lam_.size(); ++i) {
      double l2 = sqr(lam_[i] * u);
      r += 0.25 * std::log1p(l2) + 0.5 * d2_[i] * l2 / (1.0 + l2);
    }
    return r;
  }

  double operator()(double u) const {
    if (u <= 0.0) {
      double slope = 0.0;
      for (std::size_t i = 0; i < lam_.size(); ++i) slope += lam_[i] * (1.0 + d2_[i]);
      return 0.5 * slope - 0.5 * s_;
    }
    return std::sin(theta(u)) * std::exp(-log_rho(u)) / u;
  }

  // Deviation of theta'(u) from its limit -s/2.
  double phase_drift(double u) const {
    double d = 0.0;
    for (std::size_t i = 0; i < lam_.size(); ++i) {
      double lu2 = sqr(lam_[i] * u);
      d += lam_[i] / (1.0 + lu2) + d2_[i] * lam_[i] * (1.0 - lu2) / sqr(1.0 + lu2);
    }
    return 0.5 * std::abs(d);
  }

  // Imhof's bound on |integral from u to infinity|.
  double tail_bound(double u) const {
    double k = 0.5 * static_cast<double>(lam_.size());
    double log_b = -std::log(kPi * k) - k * std::log(u);
    for (std::size_t i = 0; i < lam_.size(); ++i) {
      double l2 = sqr(lam_[i] * u);
      log_b -= 0.5 * std::log(lam_[i]) + 0.5 * d2_[i] * l2 / (1.0 + l2);
    }
    return std::exp(log_b);
  }

  double max_weight() const { return *std::max_element(lam_.begin(), lam_.end()); }
  double min_weight() const { return *std::min_element(lam_.begin(), lam_.end()); }

 private:
  double s_;
  std::vector<double> lam_, d2_;
};

/// Wynn epsilon extrapolation of a sequence of partial sums; returns the last even-column estimate.
inline double wynn_epsilon(const std::vector<double>& sums, double* change) {
  const std::size_t n = sums.size();
  double best = sums.back(), last = sums.front();
  // col holds eps_{k-1}, col_prev holds eps_{k-2}; even columns are estimates.
  std::vector<double> col_prev(n + 1, 0.0);
  std::vector<double> col(sums.begin(), sums.end());
  for (std::size_t k = 1; k < n; ++k) {
    std::vector<double> next(col.size() - 1);
    for (std::size_t j = 0; j + 1 < col.size(); ++j) {
      double diff = col[j + 1] - col[j];
      double base = (k == 1) ? 0.0 : col_prev[j + 1];
      if (diff == 0.0) {
        next.resize(j);
        break;
      }
      next[j] = base + 1.0 / diff;
    }
    col_prev = col;
    col = next;
    if (col.size() < 1) break;
    if (k % 2 == 0) {
      last = best;
      best = col.back();
    }
  }
  if (change) *change = std::abs(best - last);
  return best;
}

}  // namespace detail

/// P(Q > s) for Q distributed as spec, by Imhof's inversion formula. The oscillatory tail
/// is summed over half-period panels and extrapolated with Wynn's epsilon algorithm.
inline double quadform_survival(double s, const QuadFormSpec& spec, double abs_tol = 1e-11) {
  spec.validate();
  if (s <= 0.0) return 1.0;
  detail::ImhofIntegrand f(spec, s);
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  // Panels span an odd number of half-periods of the limiting oscillation, but no
  // less than the decay scale 1/max weight.
  const double half = 2.0 * kPi / s;
  const double h = half * (2.0 * std::floor(0.5 / (f.max_weight() * half)) + 1.0);
  double total = 0.0, u = 0.0;
  std::vector<double> partial;
  double prev_extrap = kNaN, achieved = kInf;
  constexpr int kMaxPanels = 200000;
  for (int panel = 0; panel < kMaxPanels; ++panel) {
    double err = 0.0;
    total += GK::integrate(f, u, u + h, 12, 1e-13, &err);
    u += h;
    double bound = f.tail_bound(u);
    if (bound < 0.1 * abs_tol * kPi) return std::clamp(0.5 + total / kPi, 0.0, 1.0);
    if (f.phase_drift(u) > 0.02 * s) continue;
    partial.push_back(total);
    if (partial.size() > 40) partial.erase(partial.begin());
    if (partial.size() >= 12) {
      double change = 0.0;
      double est = detail::wynn_epsilon(partial, &change);
      if (!std::isnan(prev_extrap)) {
        achieved = std::max(change, std::abs(est - prev_extrap)) / kPi;
        if (achieved < 0.1 * abs_tol && std::isfinite(est)) return std::clamp(0.5 + est / kPi, 0.0, 1.0);
      }
      prev_extrap = est;
    }
  }
  std::ostringstream os;
  os << "quadform_survival: Imhof integral did not converge (achieved tolerance " << achieved << ")";
  throw NumericalFailure(os.str());
}

/// Monte-Carlo estimate of P(Q > s), used to cross-check the inversion formula.
inline McEstimate quadform_survival_mc(double s, const QuadFormSpec& spec, long draws, std::uint64_t seed) {
  spec.validate();
  require(draws > 0, "quadform_survival_mc: draws must be positive");
  Rng gen(seed);
  boost::random::normal_distribution<double> norm;
  long hits = 0;
  const Index m = spec.size();
  for (long r = 0; r < draws; ++r) {
    double q = 0.0;
    for (Index i = 0; i < m; ++i) q += spec.weights(i) * sqr(norm(gen) + spec.mean_shift(i));
    hits += q > s;
  }
  double p = static_cast<double>(hits) / static_cast<double>(draws);
  return {p, std::sqrt(std::max(p * (1.0 - p), 1e-300) / static_cast<double>(draws))};
}

/// s with P(Q > s) = upper_tail; bisection on a doubling bracket.
inline double quadform_quantile(double upper_tail, const QuadFormSpec& spec) {
  spec.validate();
  require(upper_tail > 0.0 && upper_tail <= 1.0, "quadform_quantile: tail probability must lie in (0, 1]");
  if (upper_tail >= 1.0) return 0.0;
  double mean = 0.0, var = 0.0;
  for (Index i = 0; i < spec.size(); ++i) {
    double w = spec.weights(i), d2 = sqr(spec.mean_shift(i));
    mean += w * (1.0 + d2);
    var += 2.0 * w * w * (1.0 + 2.0 * d2);
  }
  double lo = 0.0, hi = mean + 10.0 * std::sqrt(var);
  for (int k = 0; quadform_survival(hi, spec) > upper_tail; ++k) {
    if (k > 200) throw NumericalFailure("quadform_quantile: bracket expansion failed");
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > 1e-12 * hi) {
    double mid = 0.5 * (lo + hi);
    if (quadform_survival(mid, spec) > upper_tail) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Root finding
// ---------------------------------------------------------------------------

/// Root of a monotone function g. The bracket grows from x0 in doubling steps toward
/// the sign change, then TOMS 748 narrows it to x_tol.
template <class F>
double monotone_root(F g, bool increasing, double x0, double step, double x_tol, int max_doublings = 200) {
  require(step > 0.0 && std::isfinite(x0), "monotone_root: need a finite start and positive step");
  double g0 = g(x0);
  if (g0 == 0.0) return x0;
  if (std::isnan(g0)) throw NumericalFailure("monotone_root: function is NaN at the starting point");
  // Walk right when g is below zero and increasing, or above zero and decreasing.
  const double dir = ((g0 < 0.0) == increasing) ? 1.0 : -1.0;
  double a = x0, ga = g0, b = x0, gb = g0;
  for (int k = 0;; ++k) {
    if (k >= max_doublings) throw NumericalFailure("monotone_root: bracket expansion failed");
    b = a + dir * step;
    gb = g(b);
    if (std::isnan(gb)) throw NumericalFailure("monotone_root: function is NaN inside the bracket");
    if (gb == 0.0) return b;
    if ((gb > 0.0) != (ga > 0.0)) break;
    a = b;
    ga = gb;
    step *= 2.0;
  }
  if (a > b) {
    std::swap(a, b);
    std::swap(ga, gb);
  }
  auto tol = [x_tol](double lo, double hi) { return std::abs(hi - lo) <= x_tol; };
  std::uintmax_t iters = 300;
  auto r = boost::math::tools::toms748_solve(g, a, b, ga, gb, tol, iters);
  return 0.5 * (r.first + r.second);
}

// ---------------------------------------------------------------------------
// Multivariate normal
// ---------------------------------------------------------------------------

inline void require_square_symmetric(const Matrix& a, const std::string& name) {
  require(a.rows() == a.cols(), name + " must be square");
  double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  require(((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale), name + " must be symmetric");
}

/// Eigen-decomposition of a symmetric PSD matrix with eigenvalues in [-tol, 0] clamped to zero,
/// tol = 1e-10 * trace / m. More negative eigenvalues are rejected.
struct PsdDecomposition {
  Vector values;
  Matrix vectors;
};

inline PsdDecomposition psd_decompose(const Matrix& a, const std::string& name = "matrix") {
  require_square_symmetric(a, name);
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericalFailure(name + ": eigen-decomposition failed");
  const double m = static_cast<double>(a.rows());
  const double tol = 1e-10 * std::max(std::abs(sym.trace()), 1e-300) / m;
  const double most_negative = es.eigenvalues().minCoeff();
  if (most_negative < -tol) {
    std::ostringstream os;
    os << name << " is not positive semi-definite (most negative eigenvalue " << most_negative << ")";
    throw InvalidInput(os.str());
  }
  return {es.eigenvalues().cwiseMax(0.0), es.eigenvectors()};
}

/// Symmetric square root of a PSD matrix.
inline Matrix psd_sqrt(const Matrix& a, const std::string& name = "matrix") {
  auto d = psd_decompose(a, name);
  return d.vectors * d.values.cwiseSqrt().asDiagonal() * d.vectors.transpose();
}

/// Draws from N(mean, cov); the covariance is factorized once.
class MvnSampler {
 public:
  MvnSampler(Vector mean, const Matrix& cov) : mean_(std::move(mean)) {
    require(cov.rows() == mean_.size(), "MvnSampler: dimension mismatch");
    auto d = psd_decompose(cov, "covariance");
    factor_ = d.vectors * d.values.cwiseSqrt().asDiagonal();
    z_.resize(mean_.size());
  }

  Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  void set_mean(const Vector& mu) { mean_ = mu; }
  const Matrix& factor() const { return factor_; }

  template <class Gen>
  void draw(Gen& gen, Vector& out) {
    for (Index i = 0; i < z_.size(); ++i) z_(i) = norm_(gen);
    out.noalias() = mean_ + factor_ * z_;
  }

  template <class Gen>
  Vector draw(Gen& gen) {
    Vector out(dim());
    draw(gen, out);
    return out;
  }

 private:
  Vector mean_;
  Matrix factor_;
  Vector z_;
  boost::random::normal_distribution<double> norm_;
};

/// count x m matrix of iid N(mu, sigma) draws, deterministic in seed.
inline Matrix mvn_sample(const Vector& mu, const Matrix& sigma, Index count, std::uint64_t seed) {
  require(count >= 0, "mvn_sample: negative count");
  MvnSampler sampler(mu, sigma);
  Matrix out(count, mu.size());
  Rng gen(seed);
  Vector row(mu.size());
  for (Index r = 0; r < count; ++r) {
    sampler.draw(gen, row);
    out.row(r) = row.transpose();
  }
  return out;
}

/// Weights (eigenvalues of Sigma^{1/2} K Sigma^{1/2}) of the quadratic form beta_hat' K beta_hat.
/// With a mean vector, the noncentralities make the spec describe the law of the form at that mean.
inline QuadFormSpec eig_weights(const Matrix& k, const Matrix& sigma, const std::optional<Vector>& mean = std::nullopt) {
  require(k.rows() == sigma.rows() && k.cols() == sigma.cols(), "eig_weights: dimension mismatch between K and Sigma");
  psd_decompose(k, "K");
  auto sd = psd_decompose(sigma, "Sigma");
  const Matrix root = sd.vectors * sd.values.cwiseSqrt().asDiagonal() * sd.vectors.transpose();
  const Matrix mid = root * (0.5 * (k + k.transpose())) * root;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (mid + mid.transpose()));
  if (es.info() != Eigen::Success) throw NumericalFailure("eig_weights: eigen-decomposition failed");
  const Vector vals = es.eigenvalues().cwiseMax(0.0);
  const double cutoff = 1e-12 * std::max(vals.maxCoeff(), 1e-300);
  std::vector<Index> keep;
  for (Index i = 0; i < vals.size(); ++i)
    if (vals(i) > cutoff) keep.push_back(i);
  require(!keep.empty(), "eig_weights: K Sigma has no positive eigenvalue");

  QuadFormSpec spec;
  spec.weights.resize(static_cast<Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) spec.weights(static_cast<Index>(j)) = vals(keep[j]);
  if (mean && mean->size() > 0 && mean->cwiseAbs().maxCoeff() > 0.0) {
    require(mean->size() == sigma.rows(), "eig_weights: mean has wrong dimension");
    const double smax = sd.values.maxCoeff();
    require(sd.values.minCoeff() > 1e-12 * smax, "eig_weights: noncentrality needs a positive definite Sigma");
    const Matrix inv_root = sd.vectors * sd.values.cwiseSqrt().cwiseInverse().asDiagonal() * sd.vectors.transpose();
    const Vector rotated = es.eigenvectors().transpose() * (inv_root * *mean);
    spec.noncentrality.resize(spec.weights.size());
    for (std::size_t j = 0; j < keep.size(); ++j) spec.noncentrality(static_cast<Index>(j)) = rotated(keep[j]);
  }
  return spec;
}

}  // namespace postsel

#endif  // POSTSEL_KERNELS_HPP
