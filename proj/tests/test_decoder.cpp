#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "deepsitar/decoder.hpp"
#include "deepsitar/simulator.hpp"

using namespace deepsitar;

namespace {

SitarDecoder random_decoder(SeededRng& rng) {
  const int n_seg = 3 + static_cast<int>(rng.below(10));
  BSplineBasis basis = make_basis(-4.5, 4.5, n_seg, 3, 0.15);
  std::vector<double> alpha(basis.size());
  for (double& a : alpha) a = rng.uniform(100.0, 180.0);
  return SitarDecoder(std::move(basis), std::move(alpha), {rng.uniform(-1, 1), 13.5, 0.0});
}

RandomEffects random_effects(SeededRng& rng) {
  return {6.0 * rng.normal(), rng.normal(), 0.1 * rng.normal()};
}

}  // namespace

TEST_CASE("warp_time examples") {
  CHECK(warp_time(12.0, {}, {}) == 12.0);
  CHECK(warp_time(12.0, {}, {0.0, 1.0, 0.0}) == 11.0);
  CHECK(warp_time(12.0, {}, {0.0, 0.0, std::log(2.0)}) == doctest::Approx(24.0).epsilon(1e-15));
  CHECK(warp_time(12.0, {0.0, 2.0, 0.0}, {0.0, 1.0, 0.0}) == 9.0);
}

TEST_CASE("decode examples") {
  const std::vector<double> t{9.0, 11.5, 14.0, 18.0};
  BSplineBasis basis = make_basis(9, 18, 6);
  const std::size_t m = basis.size();

  SitarDecoder zero(basis, std::vector<double>(m, 0.0));
  for (double v : decode(zero, t, {5.0, 0.3, -0.1}).values) CHECK(v == 5.0);

  SitarDecoder ones(basis, std::vector<double>(m, 1.0));
  for (double v : decode(ones, t, {}).values) CHECK(std::abs(v - 1.0) < 1e-12);

  SeededRng rng(1);
  std::vector<double> alpha(m);
  for (double& a : alpha) a = rng.uniform(-5, 5);
  SitarDecoder dec(basis, alpha, {2.5, 0.0, 0.0});
  const auto x = design_matrix(basis, t);
  const auto direct = multiply(x, alpha);
  const auto got = decode(dec, t, {}).values;
  for (std::size_t j = 0; j < t.size(); ++j) CHECK(std::abs(got[j] - (direct[j] + 2.5)) < 1e-12);
}

TEST_CASE("alpha length must match the basis") {
  CHECK_THROWS(SitarDecoder(make_basis(0, 1, 2), {1.0, 2.0}));
}

TEST_CASE("decode_gradients simple cases") {
  BSplineBasis basis = make_basis(9, 18, 6);
  const std::vector<double> t{9.5, 12.0, 15.0, 17.5};
  SitarDecoder flat(basis, std::vector<double>(basis.size(), 3.0));
  const DecoderPartials p = decode_gradients(flat, t, {1.0, 0.2, 0.05});
  for (std::size_t j = 0; j < t.size(); ++j) {
    CHECK(p.d_a1[j] == 1.0);
    CHECK(std::abs(p.d_b1[j]) < 1e-12);
    CHECK(std::abs(p.d_c1[j]) < 1e-12);
  }
}

TEST_CASE("decoder partials match finite differences on 100 seeded configurations") {
  SeededRng rng(2024);
  const std::vector<double> t = make_ages(20);
  // yhat is linear in a1 and alpha, so those steps can be large. The curve is
  // only C1 where extrapolation starts; b1/c1 stencils straddling that point
  // are skipped.
  const double h_lin = 1e-2;
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  for (int config = 0; config < 100; ++config) {
    SitarDecoder dec = random_decoder(rng);
    const RandomEffects re = random_effects(rng);
    const DecoderPartials p = decode_gradients(dec, t, re);

    auto shifted = [&](int which, double step) {
      RandomEffects r = re;
      (which == 0 ? r.a1 : which == 1 ? r.b1 : r.c1) += step;
      return decode(dec, t, r).values;
    };
    for (int which = 0; which < 3; ++which) {
      const double step = which == 0 ? h_lin : h;
      const auto plus = shifted(which, step);
      const auto minus = shifted(which, -step);
      const auto& analytic = which == 0 ? p.d_a1 : which == 1 ? p.d_b1 : p.d_c1;
      for (std::size_t j = 0; j < t.size(); ++j) {
        if (which > 0) {
          RandomEffects lo = re;
          RandomEffects hi = re;
          (which == 1 ? lo.b1 : lo.c1) -= step;
          (which == 1 ? hi.b1 : hi.c1) += step;
          const auto& basis = dec.basis();
          const bool a = basis.in_domain(warp_time(t[j], dec.fixed(), lo));
          const bool b = basis.in_domain(warp_time(t[j], dec.fixed(), hi));
          if (a != b) {
            ++skipped;
            continue;
          }
        }
        ++checked;
        worst = std::max(worst,
                         testing::rel_err(analytic[j], (plus[j] - minus[j]) / (2 * step), 1e-3));
      }
    }
    for (std::size_t k = 0; k < dec.alpha().size(); ++k) {
      const double saved = dec.alpha()[k];
      dec.mutable_alpha()[k] = saved + h_lin;
      const auto plus = decode(dec, t, re).values;
      dec.mutable_alpha()[k] = saved - h_lin;
      const auto minus = decode(dec, t, re).values;
      dec.mutable_alpha()[k] = saved;
      for (std::size_t j = 0; j < t.size(); ++j)
        worst = std::max(worst, testing::rel_err(p.d_alpha(j, k),
                                                 (plus[j] - minus[j]) / (2 * h_lin), 1e-3));
    }
  }
  CHECK(worst < 1e-5);
  CHECK(skipped < checked / 100);
}

TEST_CASE("shift and scale covariance") {
  SeededRng rng(77);
  const SitarDecoder dec = random_decoder(rng);
  const std::vector<double> t{11.0, 12.5, 13.0, 14.2, 15.9};
  const double delta = 0.7;
  std::vector<double> t_shift(t.size());
  for (std::size_t j = 0; j < t.size(); ++j) t_shift[j] = t[j] - delta;
  const auto a = decode(dec, t, {0.0, delta, 0.0}).values;
  const auto b = decode(dec, t_shift, {}).values;
  for (std::size_t j = 0; j < t.size(); ++j) CHECK(std::abs(a[j] - b[j]) < 1e-12);

  const double gamma = 0.12;
  const auto scaled = decode(dec, t, {0.0, 0.0, gamma}).values;
  for (std::size_t j = 0; j < t.size(); ++j) {
    const double w = warp_time(t[j], dec.fixed(), {0.0, 0.0, gamma});
    CHECK(std::abs(scaled[j] - (dec.fixed().a0 + dec.spline(w))) < 1e-12);
  }

  // zero effects give the plain spline curve
  const auto plain = decode(dec, t, {}).values;
  for (std::size_t j = 0; j < t.size(); ++j)
    CHECK(std::abs(plain[j] - (dec.fixed().a0 + dec.spline(t[j] - dec.fixed().b0))) < 1e-12);
}

TEST_CASE("out-of-domain warps are counted") {
  const SitarDecoder dec(make_basis(-4.5, 4.5, 5, 3, 0.0), std::vector<double>(8, 1.0),
                         {0.0, 13.5, 0.0});
  const std::vector<double> t{9.0, 13.5, 18.0};
  CHECK(decode(dec, t, {}).out_of_domain == 0);
  CHECK(decode(dec, t, {0.0, 3.0, 0.0}).out_of_domain == 1);
  CHECK(decode_gradients(dec, t, {0.0, 0.0, 0.5}).out_of_domain == 2);
}
