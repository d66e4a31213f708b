#ifndef POSTSEL_SELECTION_HPP
#define POSTSEL_SELECTION_HPP

// Summary statistics and the aggregate tests that decide whether a group of
// coefficients is analyzed further.

#include <optional>
#include <variant>

#include "postsel/kernels.hpp"

namespace postsel {

/// beta_hat ~ N(beta, Sigma) with Sigma known.
struct SummaryStats {
  Vector beta_hat;
  Matrix Sigma;
  Vector se;

  static SummaryStats make(Vector beta_hat, Matrix sigma) {
    require(beta_hat.size() > 0, "summary stats: empty coefficient vector");
    require(sigma.rows() == beta_hat.size() && sigma.cols() == beta_hat.size(),
            "summary stats: Sigma must be " + std::to_string(beta_hat.size()) + "x" + std::to_string(beta_hat.size()));
    require(beta_hat.allFinite() && sigma.allFinite(), "summary stats: non-finite entries");
    psd_decompose(sigma, "Sigma");
    SummaryStats s{std::move(beta_hat), std::move(sigma), Vector()};
    s.Sigma = 0.5 * (s.Sigma + s.Sigma.transpose());
    s.se = s.Sigma.diagonal().cwiseSqrt();
    require((s.se.array() > 0.0).all(), "summary stats: every standard error must be positive");
    return s;
  }

  Index dim() const { return beta_hat.size(); }
  Vector z() const { return beta_hat.cwiseQuotient(se); }
};

struct QuadraticTest {
  Matrix K;
  double t1 = kNaN;
  double threshold = kNaN;  // upper t1 quantile of beta_hat' K beta_hat under beta = 0
  QuadFormSpec null_law;
  bool wald = false;  // K Sigma = I up to 1e-8
};

/// Selected when a' beta_hat < l or a' beta_hat > u. Both bounds infinite is the
/// untruncated sentinel: every dataset counts as selected.
struct LinearTest {
  Vector a;
  double l = -kInf;
  double u = kInf;
  double t1 = kNaN;  // NaN for explicit bounds
  double sd = kNaN;  // sqrt(a' Sigma a)

  bool untruncated() const { return l == -kInf && u == kInf; }
  bool one_sided() const { return !untruncated() && (l == -kInf || u == kInf); }
  bool symmetric() const { return untruncated() || l == -u; }
};

class AggregateTest {
 public:
  AggregateTest(QuadraticTest q) : v_(std::move(q)) {}
  AggregateTest(LinearTest l) : v_(std::move(l)) {}

  bool is_quadratic() const { return std::holds_alternative<QuadraticTest>(v_); }
  bool is_linear() const { return std::holds_alternative<LinearTest>(v_); }
  const QuadraticTest& quadratic() const { return std::get<QuadraticTest>(v_); }
  const LinearTest& linear() const { return std::get<LinearTest>(v_); }
  Index dim() const { return is_quadratic() ? quadratic().K.rows() : linear().a.size(); }

  /// Stored level; NaN for explicit-bound linear tests.
  double t1() const { return is_quadratic() ? quadratic().t1 : linear().t1; }

 private:
  std::variant<QuadraticTest, LinearTest> v_;
};

inline bool is_identity(const Matrix& a, double tol) {
  return (a - Matrix::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff() <= tol;
}

inline AggregateTest make_quadratic_test(const Matrix& k, const SummaryStats& stats, double t1) {
  require(t1 > 0.0 && t1 <= 1.0, "quadratic test: t1 must lie in (0, 1]");
  require(k.rows() == stats.dim() && k.cols() == stats.dim(), "quadratic test: K has the wrong dimension");
  QuadraticTest q;
  q.K = 0.5 * (k + k.transpose());
  q.t1 = t1;
  q.null_law = eig_weights(q.K, stats.Sigma);
  q.wald = is_identity(q.K * stats.Sigma, 1e-8);
  if (q.wald && q.null_law.size() == stats.dim())
    q.threshold = chisq_quantile(t1, static_cast<double>(stats.dim()));
  else
    q.threshold = quadform_quantile(t1, q.null_law);
  return q;
}

/// Wald test: K = Sigma^{-1}.
inline AggregateTest make_wald_test(const SummaryStats& stats, double t1) {
  Eigen::LDLT<Matrix> ldlt(stats.Sigma);
  require(ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0,
          "wald test: Sigma must be positive definite");
  Matrix k = ldlt.solve(Matrix::Identity(stats.dim(), stats.dim()));
  return make_quadratic_test(k, stats, t1);
}

struct LinearSpec {
  enum class Kind { Symmetric, OneSided, Explicit };
  Kind kind = Kind::Symmetric;
  double t1 = kNaN;
  double l = -kInf;
  double u = kInf;

  static LinearSpec symmetric(double t1) { return {Kind::Symmetric, t1, kNaN, kNaN}; }
  static LinearSpec one_sided(double t1) { return {Kind::OneSided, t1, kNaN, kNaN}; }
  static LinearSpec bounds(double l, double u) { return {Kind::Explicit, kNaN, l, u}; }
};

inline AggregateTest make_linear_test(const Vector& a, const SummaryStats& stats, const LinearSpec& spec) {
  require(a.size() == stats.dim(), "linear test: a has the wrong dimension");
  require(a.allFinite() && a.cwiseAbs().maxCoeff() > 0.0, "linear test: a must be a nonzero finite vector");
  LinearTest t;
  t.a = a;
  t.sd = std::sqrt(a.dot(stats.Sigma * a));
  require(t.sd > 0.0, "linear test: a' Sigma a must be positive");
  switch (spec.kind) {
    case LinearSpec::Kind::Symmetric:
      require(spec.t1 > 0.0 && spec.t1 <= 1.0, "linear test: t1 must lie in (0, 1]");
      t.t1 = spec.t1;
      if (spec.t1 < 1.0) {
        t.u = normal_upper_quantile(0.5 * spec.t1) * t.sd;
        t.l = -t.u;
      }
      break;
    case LinearSpec::Kind::OneSided:
      require(spec.t1 > 0.0 && spec.t1 <= 1.0, "linear test: t1 must lie in (0, 1]");
      t.t1 = spec.t1;
      if (spec.t1 < 1.0) t.u = normal_upper_quantile(spec.t1) * t.sd;
      break;
    case LinearSpec::Kind::Explicit:
      require(!std::isnan(spec.l) && !std::isnan(spec.u), "linear test: NaN bound");
      require(spec.l < spec.u, "linear test: need l < u");
      t.l = spec.l;
      t.u = spec.u;
      break;
  }
  return t;
}

struct Evaluation {
  double statistic;
  bool selected;
};

inline double test_statistic(const AggregateTest& test, const Vector& x) {
  if (test.is_quadratic()) return x.dot(test.quadratic().K * x);
  return test.linear().a.dot(x);
}

inline bool is_selected(const AggregateTest& test, double statistic) {
  if (test.is_quadratic()) return statistic > test.quadratic().threshold;
  const LinearTest& t = test.linear();
  return t.untruncated() || statistic < t.l || statistic > t.u;
}

inline Evaluation evaluate(const AggregateTest& test, const SummaryStats& stats) {
  require(test.dim() == stats.dim(), "evaluate: test and statistics differ in dimension");
  double s = test_statistic(test, stats.beta_hat);
  return {s, is_selected(test, s)};
}

/// P_mu(selection) for beta_hat ~ N(mu, Sigma).
inline double selection_probability(const AggregateTest& test, const Matrix& sigma, const Vector& mu) {
  if (test.is_quadratic()) {
    const QuadraticTest& q = test.quadratic();
    if (q.threshold <= 0.0) return 1.0;
    const double m = static_cast<double>(sigma.rows());
    if (q.wald && q.null_law.size() == sigma.rows()) return chisq_sf(q.threshold, m, mu.dot(q.K * mu));
    return quadform_survival(q.threshold, eig_weights(q.K, sigma, mu));
  }
  const LinearTest& t = test.linear();
  if (t.untruncated()) return 1.0;
  const double c = t.a.dot(mu);
  return normal_cdf((t.l - c) / t.sd) + normal_tail((t.u - c) / t.sd);
}

/// P_0(selection); equals t1 except for explicit-bound linear tests, where it is computed.
inline double null_selection_probability(const AggregateTest& test, const Matrix& sigma) {
  if (!std::isnan(test.t1())) return test.t1();
  return selection_probability(test, sigma, Vector::Zero(sigma.rows()));
}

/// P_0(aggregate statistic at least as extreme as observed): the aggregate test's own p-value.
inline double aggregate_pvalue(const AggregateTest& test, const Matrix& sigma, double statistic) {
  if (test.is_quadratic()) {
    const QuadraticTest& q = test.quadratic();
    if (q.wald && q.null_law.size() == sigma.rows()) return chisq_sf(statistic, static_cast<double>(sigma.rows()));
    return quadform_survival(statistic, q.null_law);
  }
  const LinearTest& t = test.linear();
  const double z = statistic / t.sd;
  if (t.untruncated() || t.symmetric()) return std::min(1.0, 2.0 * normal_tail(std::abs(z)));
  if (t.l == -kInf) return normal_tail(z);
  if (t.u == kInf) return normal_cdf(z);
  // Asymmetric two-sided bounds: probability of landing further out than observed on the same side.
  return z > 0 ? normal_tail(z) : normal_cdf(z);
}

}  // namespace postsel

#endif  // POSTSEL_SELECTION_HPP
