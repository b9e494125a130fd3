#include "deepsitar/decoder.hpp"

#include <cmath>
#include <string>

namespace deepsitar {

double warp_time(double t, const FixedEffects& fx, const RandomEffects& re) {
  return (t - (fx.b0 + re.b1)) * std::exp(fx.c0 + re.c1);
}

SitarDecoder::SitarDecoder(BSplineBasis basis, std::vector<double> alpha, FixedEffects fixed)
    : basis_(std::move(basis)), alpha_(std::move(alpha)), fixed_(fixed) {
  if (alpha_.size() != basis_.size()) {
    throw DimMismatch("decoder: " + std::to_string(alpha_.size()) + " coefficients for a basis of " +
                      std::to_string(basis_.size()));
  }
}

double SitarDecoder::spline(double w) const {
  const std::size_t width = static_cast<std::size_t>(basis_.degree()) + 1;
  std::vector<double> local(width);
  const std::size_t first = basis_.evaluate_local(w, local, {});
  double s = 0.0;
  for (std::size_t i = 0; i < width; ++i) s += local[i] * alpha_[first + i];
  return s;
}

void SitarDecoder::evaluate(double t, const RandomEffects& re, PointJet& jet) const {
  const std::size_t width = static_cast<std::size_t>(basis_.degree()) + 1;
  jet.basis_values.resize(width);
  std::array<double, 16> slope_buffer{};
  std::span<double> slopes(slope_buffer.data(), width);

  const double scale = std::exp(fixed_.c0 + re.c1);
  const double shifted = t - (fixed_.b0 + re.b1);
  const double w = shifted * scale;

  jet.first = basis_.evaluate_local(w, jet.basis_values, slopes);
  jet.out_of_domain = !basis_.in_domain(w);

  double s = 0.0;
  double ds = 0.0;
  for (std::size_t i = 0; i < width; ++i) {
    s += jet.basis_values[i] * alpha_[jet.first + i];
    ds += slopes[i] * alpha_[jet.first + i];
  }
  jet.value = fixed_.a0 + re.a1 + s;
  jet.d_b1 = -scale * ds;
  jet.d_c1 = w * ds;
}

Decoded decode(const SitarDecoder& dec, std::span<const double> t, const RandomEffects& re) {
  Decoded out;
  out.values.resize(t.size());
  PointJet jet;
  for (std::size_t j = 0; j < t.size(); ++j) {
    dec.evaluate(t[j], re, jet);
    out.values[j] = jet.value;
    out.out_of_domain += jet.out_of_domain ? 1 : 0;
  }
  return out;
}

DecoderPartials decode_gradients(const SitarDecoder& dec, std::span<const double> t,
                                 const RandomEffects& re) {
  DecoderPartials out;
  out.d_a1.assign(t.size(), 1.0);
  out.d_b1.resize(t.size());
  out.d_c1.resize(t.size());
  out.d_alpha = SmallMatrix(t.size(), dec.basis().size());
  PointJet jet;
  for (std::size_t j = 0; j < t.size(); ++j) {
    dec.evaluate(t[j], re, jet);
    out.d_b1[j] = jet.d_b1;
    out.d_c1[j] = jet.d_c1;
    for (std::size_t i = 0; i < jet.basis_values.size(); ++i)
      out.d_alpha(j, jet.first + i) = jet.basis_values[i];
    out.out_of_domain += jet.out_of_domain ? 1 : 0;
  }
  return out;
}

}  // namespace deepsitar
