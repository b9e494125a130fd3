#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "deepsitar/numerics.hpp"
#include "deepsitar/splines.hpp"

namespace deepsitar {

/// Per-individual deviations: size (measurement units), tempo (years) and
/// velocity (log scale of the age axis).
struct RandomEffects {
  double a1 = 0.0;
  double b1 = 0.0;
  double c1 = 0.0;

  std::array<double, 3> as_array() const { return {a1, b1, c1}; }
  static RandomEffects from(std::span<const double> u) { return {u[0], u[1], u[2]}; }
  bool operator==(const RandomEffects&) const = default;
};

struct FixedEffects {
  double a0 = 0.0;
  double b0 = 0.0;
  double c0 = 0.0;
  bool operator==(const FixedEffects&) const = default;
};

/// (t - (b0 + b1)) * exp(c0 + c1).
double warp_time(double t, const FixedEffects& fx, const RandomEffects& re);

/// Value of the warped curve at one time point plus everything needed to
/// differentiate it.
struct PointJet {
  double value = 0.0;
  double d_b1 = 0.0;
  double d_c1 = 0.0;
  /// First basis function touching the warped time and its weight(s); the
  /// partial with respect to alpha[first + i] is basis_values[i].
  std::size_t first = 0;
  std::vector<double> basis_values;
  bool out_of_domain = false;
};

/// Shape-invariant growth curve
///   y(t) = a0 + a1 + sum_k B_k((t - b0 - b1) * exp(c0 + c1)) * alpha_k
/// with alpha shared by all individuals.
class SitarDecoder {
 public:
  SitarDecoder(BSplineBasis basis, std::vector<double> alpha, FixedEffects fixed = {});

  const BSplineBasis& basis() const { return basis_; }
  const std::vector<double>& alpha() const { return alpha_; }
  std::span<double> mutable_alpha() { return alpha_; }
  const FixedEffects& fixed() const { return fixed_; }

  double spline(double w) const;
  void evaluate(double t, const RandomEffects& re, PointJet& jet) const;

 private:
  BSplineBasis basis_;
  std::vector<double> alpha_;
  FixedEffects fixed_;
};

struct Decoded {
  std::vector<double> values;
  std::size_t out_of_domain = 0;
};

Decoded decode(const SitarDecoder& dec, std::span<const double> t, const RandomEffects& re);

struct DecoderPartials {
  std::vector<double> d_a1;
  std::vector<double> d_b1;
  std::vector<double> d_c1;
  /// |t| x m, row j holds d yhat_j / d alpha.
  SmallMatrix d_alpha;
  std::size_t out_of_domain = 0;
};

DecoderPartials decode_gradients(const SitarDecoder& dec, std::span<const double> t,
                                 const RandomEffects& re);

}  // namespace deepsitar
