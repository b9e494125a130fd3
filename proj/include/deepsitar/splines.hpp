#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "deepsitar/numerics.hpp"

namespace deepsitar {

class InvalidDomain : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidCounts : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Equally spaced B-spline basis.
///
/// The requested domain [lo, hi] is widened by margin*(hi-lo) on both sides.
/// The widened interval is split into n_seg equal segments and `degree`
/// further knots with the same spacing are appended on each side, so every
/// basis function is a translate of the same uniform B-spline. There are
/// m = n_seg + degree functions.
///
/// Beyond the widened interval each basis function continues linearly with
/// its boundary value and slope; such evaluations are flagged as out of
/// domain.
class BSplineBasis {
 public:
  BSplineBasis(double domain_lo, double domain_hi, int n_seg, int degree, double margin);

  int degree() const { return degree_; }
  int segments() const { return n_seg_; }
  double margin() const { return margin_; }
  double domain_lo() const { return domain_lo_; }
  double domain_hi() const { return domain_hi_; }
  /// Widened interval on which the piecewise polynomials live.
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double spacing() const { return spacing_; }
  std::size_t size() const { return static_cast<std::size_t>(n_seg_ + degree_); }
  const std::vector<double>& knots() const { return knots_; }

  bool in_domain(double t) const { return t >= lower_ && t <= upper_; }

  /// Values (and optionally first derivatives) of the degree+1 basis
  /// functions that can be nonzero at t. `values` and `derivs` must hold
  /// degree+1 entries; `derivs` may be empty. Returns the index of the first
  /// of those functions.
  std::size_t evaluate_local(double t, std::span<double> values, std::span<double> derivs) const;

 private:
  void local_inside(double t, std::size_t span, std::span<double> values,
                    std::span<double> derivs) const;
  void cox_de_boor(double t, std::size_t knot_span, int degree, std::span<double> out) const;

  double domain_lo_;
  double domain_hi_;
  int n_seg_;
  int degree_;
  double margin_;
  double lower_;
  double upper_;
  double spacing_;
  std::vector<double> knots_;
};

BSplineBasis make_basis(double domain_lo, double domain_hi, int n_seg, int degree = 3,
                        double margin = 0.15);

struct BasisValues {
  std::vector<double> values;
  bool out_of_domain = false;
};

/// All m basis values at t.
BasisValues eval_basis(const BSplineBasis& basis, double t);

/// All m basis derivatives d/dt B_k(t).
BasisValues eval_basis_derivative(const BSplineBasis& basis, double t);

/// |times| x m matrix whose row j is eval_basis(basis, times[j]).
SmallMatrix design_matrix(const BSplineBasis& basis, std::span<const double> times);

}  // namespace deepsitar
