#include "deepsitar/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace deepsitar {

SmallMatrix::SmallMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), entries_(rows * cols, fill) {}

SmallMatrix::SmallMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (entries_.size() != rows * cols) {
    throw DimMismatch("SmallMatrix: " + std::to_string(entries_.size()) + " entries for a " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
  }
}

SmallMatrix SmallMatrix::identity(std::size_t n) {
  SmallMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

SmallMatrix SmallMatrix::diagonal(std::span<const double> diag) {
  SmallMatrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

SmallMatrix operator*(const SmallMatrix& a, const SmallMatrix& b) {
  if (a.cols() != b.rows()) throw DimMismatch("matrix product: inner dimensions differ");
  SmallMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

SmallMatrix transpose(const SmallMatrix& m) {
  SmallMatrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

std::vector<double> multiply(const SmallMatrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) throw DimMismatch("matrix-vector product: size mismatch");
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * x[j];
    out[i] = acc;
  }
  return out;
}

double max_abs_diff(const SmallMatrix& a, const SmallMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimMismatch("max_abs_diff: shapes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i)
    worst = std::max(worst, std::abs(a.entries()[i] - b.entries()[i]));
  return worst;
}

namespace {

void require_symmetric(const SmallMatrix& m) {
  if (!m.square()) throw DimMismatch("expected a square matrix");
  double scale = 1.0;
  for (double v : m.entries()) {
    if (!std::isfinite(v)) throw NotPositiveDefinite("matrix has non-finite entries");
    scale = std::max(scale, std::abs(v));
  }
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-10 * scale)
        throw std::invalid_argument("matrix is not symmetric");
}

}  // namespace

SmallMatrix cholesky_spd(const SmallMatrix& m) {
  require_symmetric(m);
  const std::size_t n = m.rows();
  SmallMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = m(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0)) {
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) + " is " +
                                std::to_string(pivot));
    }
    const double ljj = std::sqrt(pivot);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

namespace {

// Solves L L^T x = b in place.
void cholesky_substitute(const SmallMatrix& l, std::span<double> x) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
    x[i] = s / l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
}

}  // namespace

SmallMatrix spd_inverse(const SmallMatrix& m) {
  const SmallMatrix l = cholesky_spd(m);
  const std::size_t n = m.rows();
  SmallMatrix inv(n, n);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(column.begin(), column.end(), 0.0);
    column[j] = 1.0;
    cholesky_substitute(l, column);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = column[i];
  }
  // Symmetrize away round-off so downstream quadratic forms see an exact
  // symmetric matrix.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double avg = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = avg;
      inv(j, i) = avg;
    }
  return inv;
}

std::vector<double> spd_solve(const SmallMatrix& m, std::span<const double> b) {
  if (b.size() != m.rows()) throw DimMismatch("spd_solve: right-hand side size mismatch");
  const SmallMatrix l = cholesky_spd(m);
  std::vector<double> x(b.begin(), b.end());
  cholesky_substitute(l, x);
  return x;
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteEvaluation("finite_diff_gradient: non-finite value at coordinate " +
                                std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], keeping the logarithm finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("SeededRng::below: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t draw = next_u64();
  while (draw >= limit) draw = next_u64();
  return draw % n;
}

}  // namespace deepsitar
