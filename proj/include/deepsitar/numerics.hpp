#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepsitar {

class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteEvaluation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix for the small sizes used here (covariances,
/// layer weights, design matrices).
class SmallMatrix {
 public:
  SmallMatrix() = default;
  SmallMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  SmallMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static SmallMatrix identity(std::size_t n);
  static SmallMatrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return entries_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return entries_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {entries_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {entries_.data() + r * cols_, cols_}; }

  std::span<double> entries() { return entries_; }
  std::span<const double> entries() const { return entries_; }

  bool operator==(const SmallMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

SmallMatrix operator*(const SmallMatrix& a, const SmallMatrix& b);
SmallMatrix transpose(const SmallMatrix& m);
std::vector<double> multiply(const SmallMatrix& m, std::span<const double> x);
double max_abs_diff(const SmallMatrix& a, const SmallMatrix& b);

/// Lower-triangular L with L*L^T = m. Throws NotPositiveDefinite when a
/// pivot is not strictly positive; callers are expected to add jitter.
SmallMatrix cholesky_spd(const SmallMatrix& m);

/// Inverse of an SPD matrix through its Cholesky factor.
SmallMatrix spd_inverse(const SmallMatrix& m);

/// Solves m*x = b for SPD m.
std::vector<double> spd_solve(const SmallMatrix& m, std::span<const double> b);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h);

/// Deterministic random stream.
///
/// The engine is std::mt19937_64, whose recurrence and tempering constants
/// are fixed by the C++ standard, so the raw 64-bit stream is identical on
/// every conforming platform. The std:: distributions are implementation
/// defined and therefore not used; the transforms below are:
///   uniform(): top 53 bits of one draw times 2^-53, in [0, 1)
///   normal():  Box-Muller on two uniforms, both variates used in order
///   below(n):  rejection sampling on the raw draw, unbiased
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace deepsitar
