#ifndef POSTSEL_COMMON_HPP
#define POSTSEL_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace postsel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline constexpr const char* kVersion = "0.4.0";

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: dimension mismatches, out-of-range probabilities, bad matrices.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// The data did not pass the aggregate test, so there is nothing to condition on.
class NotSelected : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not reach its tolerance.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from a base seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic seed for the stream addressed by (base, ids...).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t id : ids) h = mix64(h ^ mix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> ids = {}) {
  return Rng(derive_seed(base, ids));
}

inline double sqr(double x) { return x * x; }

struct Interval {
  double lo = kNaN;
  double hi = kNaN;

  bool contains(double x) const { return lo <= x && x <= hi; }
  double width() const { return hi - lo; }
};

}  // namespace postsel

#endif  // POSTSEL_COMMON_HPP
