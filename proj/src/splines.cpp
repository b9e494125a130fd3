#include "deepsitar/splines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace deepsitar {

namespace {

constexpr int kMaxDegree = 15;

}  // namespace

BSplineBasis::BSplineBasis(double domain_lo, double domain_hi, int n_seg, int degree,
                           double margin)
    : domain_lo_(domain_lo),
      domain_hi_(domain_hi),
      n_seg_(n_seg),
      degree_(degree),
      margin_(margin) {
  if (!std::isfinite(domain_lo) || !std::isfinite(domain_hi) || !(domain_hi > domain_lo)) {
    throw InvalidDomain("basis domain must satisfy lo < hi, got [" + std::to_string(domain_lo) +
                        ", " + std::to_string(domain_hi) + "]");
  }
  if (!std::isfinite(margin) || margin < 0.0) throw InvalidDomain("basis margin must be >= 0");
  if (n_seg < 1) throw InvalidCounts("basis needs at least one segment");
  if (degree < 0 || degree > kMaxDegree) {
    throw InvalidCounts("basis degree must lie in [0, " + std::to_string(kMaxDegree) + "]");
  }

  const double pad = margin * (domain_hi - domain_lo);
  lower_ = domain_lo - pad;
  upper_ = domain_hi + pad;
  spacing_ = (upper_ - lower_) / n_seg;

  const int n_knots = n_seg + 2 * degree + 1;
  knots_.resize(static_cast<std::size_t>(n_knots));
  for (int i = 0; i < n_knots; ++i) knots_[i] = lower_ + (i - degree) * spacing_;
  // Pin the ends of the widened interval exactly.
  knots_[degree] = lower_;
  knots_[degree + n_seg] = upper_;
}

BSplineBasis make_basis(double domain_lo, double domain_hi, int n_seg, int degree, double margin) {
  return BSplineBasis(domain_lo, domain_hi, n_seg, degree, margin);
}

// Nonzero basis functions of the given degree on knot span
// [knots[knot_span], knots[knot_span + 1]), written to out[0..degree].
void BSplineBasis::cox_de_boor(double t, std::size_t knot_span, int degree,
                               std::span<double> out) const {
  std::array<double, kMaxDegree + 1> left{};
  std::array<double, kMaxDegree + 1> right{};
  out[0] = 1.0;
  for (int r = 1; r <= degree; ++r) {
    left[r] = t - knots_[knot_span + 1 - r];
    right[r] = knots_[knot_span + r] - t;
    double saved = 0.0;
    for (int s = 0; s < r; ++s) {
      const double temp = out[s] / (right[s + 1] + left[r - s]);
      out[s] = saved + right[s + 1] * temp;
      saved = left[r - s] * temp;
    }
    out[r] = saved;
  }
}

void BSplineBasis::local_inside(double t, std::size_t span, std::span<double> values,
                                std::span<double> derivs) const {
  const std::size_t knot_span = span + static_cast<std::size_t>(degree_);
  cox_de_boor(t, knot_span, degree_, values);
  if (derivs.empty()) return;

  if (degree_ == 0) {
    derivs[0] = 0.0;
    return;
  }
  // B'_{k,q} = (B_{k,q-1} - B_{k+1,q-1}) / spacing on uniform knots. The
  // degree q-1 functions active on this span are k = span+1 .. span+q.
  std::array<double, kMaxDegree + 1> lower_degree{};
  cox_de_boor(t, knot_span, degree_ - 1, lower_degree);
  const auto q = static_cast<std::size_t>(degree_);
  for (std::size_t i = 0; i <= q; ++i) {
    const double from_self = i >= 1 ? lower_degree[i - 1] : 0.0;
    const double from_next = i < q ? lower_degree[i] : 0.0;
    derivs[i] = (from_self - from_next) / spacing_;
  }
}

std::size_t BSplineBasis::evaluate_local(double t, std::span<double> values,
                                         std::span<double> derivs) const {
  const auto q = static_cast<std::size_t>(degree_);
  if (values.size() != q + 1 || (!derivs.empty() && derivs.size() != q + 1)) {
    throw DimMismatch("evaluate_local: buffers must hold degree+1 entries");
  }

  if (t < lower_ || t > upper_) {
    const bool below = t < lower_;
    const double edge = below ? lower_ : upper_;
    const std::size_t span = below ? 0 : static_cast<std::size_t>(n_seg_ - 1);
    std::array<double, kMaxDegree + 1> slope{};
    std::span<double> slope_view(slope.data(), q + 1);
    local_inside(edge, span, values, slope_view);
    const double dt = t - edge;
    for (std::size_t i = 0; i <= q; ++i) values[i] += slope[i] * dt;
    if (!derivs.empty()) std::copy_n(slope.begin(), q + 1, derivs.begin());
    return span;
  }

  auto span = static_cast<std::ptrdiff_t>(std::floor((t - lower_) / spacing_));
  span = std::clamp<std::ptrdiff_t>(span, 0, n_seg_ - 1);
  local_inside(t, static_cast<std::size_t>(span), values, derivs);
  return static_cast<std::size_t>(span);
}

namespace {

BasisValues dense(const BSplineBasis& basis, double t, bool derivative) {
  const std::size_t width = static_cast<std::size_t>(basis.degree()) + 1;
  std::vector<double> values(width);
  std::vector<double> derivs(derivative ? width : 0);
  const std::size_t first = basis.evaluate_local(t, values, derivs);

  BasisValues out;
  out.values.assign(basis.size(), 0.0);
  out.out_of_domain = !basis.in_domain(t);
  const auto& src = derivative ? derivs : values;
  for (std::size_t i = 0; i < width; ++i) out.values[first + i] = src[i];
  return out;
}

}  // namespace

BasisValues eval_basis(const BSplineBasis& basis, double t) { return dense(basis, t, false); }

BasisValues eval_basis_derivative(const BSplineBasis& basis, double t) {
  return dense(basis, t, true);
}

SmallMatrix design_matrix(const BSplineBasis& basis, std::span<const double> times) {
  const std::size_t width = static_cast<std::size_t>(basis.degree()) + 1;
  std::vector<double> local(width);
  SmallMatrix out(times.size(), basis.size());
  for (std::size_t j = 0; j < times.size(); ++j) {
    const std::size_t first = basis.evaluate_local(times[j], local, {});
    for (std::size_t i = 0; i < width; ++i) out(j, first + i) = local[i];
  }
  return out;
}

}  // namespace deepsitar
