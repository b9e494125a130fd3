#include "deepsitar/simulator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace deepsitar {

std::string_view to_string(Split s) { return s == Split::train ? "train" : "validation"; }

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "validation") return Split::validation;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> GrowthDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < individuals.size(); ++i)
    if (individuals[i].split == s) out.push_back(i);
  return out;
}

std::size_t GrowthDataset::count(Split s) const {
  std::size_t n = 0;
  for (const auto& ind : individuals) n += ind.split == s ? 1 : 0;
  return n;
}

bool GrowthDataset::has_truth() const {
  if (individuals.empty()) return false;
  for (const auto& ind : individuals)
    if (!ind.truth) return false;
  return true;
}

void GrowthDataset::validate() const {
  for (double t : times)
    if (!std::isfinite(t)) throw std::invalid_argument("dataset: non-finite time");
  for (const auto& ind : individuals) {
    if (ind.y.size() != times.size())
      throw std::invalid_argument("dataset: individual " + std::to_string(ind.id) +
                                  " does not share the common time grid");
    for (double v : ind.y)
      if (!std::isfinite(v))
        throw std::invalid_argument("dataset: non-finite measurement for individual " +
                                    std::to_string(ind.id));
  }
}

TruthParams default_truth() {
  constexpr double kAgeLo = 9.0;
  constexpr double kAgeHi = 18.0;
  const FixedEffects fixed{0.0, 0.5 * (kAgeLo + kAgeHi), 0.0};
  BSplineBasis basis = make_basis(kAgeLo - fixed.b0, kAgeHi - fixed.b0, 9, 3, 0.0);
  // Height from 133 to 171 cm; velocity dips to 4.7 cm/yr at 11 and peaks at
  // 8.2 cm/yr at 13.5.
  SitarDecoder decoder(std::move(basis),
                       {127.2, 133.1, 138.2, 143.2, 147.6, 153.6, 162.8, 167.8, 169.7, 170.7, 170.8,
                        171.2},
                       fixed);

  // size (cm^2), tempo (years^2), velocity (dimensionless)
  SmallMatrix lambda(3, 3,
                     {40.0, 1.2, 0.06,
                      1.2, 1.0, -0.03,
                      0.06, -0.03, 0.01});
  return TruthParams{std::move(decoder), std::move(lambda), 0.4};
}

std::vector<double> make_ages(std::size_t n_points) {
  if (n_points < 2) throw std::invalid_argument("make_ages: need at least two ages");
  std::vector<double> ages(n_points);
  const double step = (18.0 - 9.0) / static_cast<double>(n_points - 1);
  for (std::size_t j = 0; j < n_points; ++j) ages[j] = 9.0 + static_cast<double>(j) * step;
  ages.back() = 18.0;
  return ages;
}

GrowthDataset simulate(std::size_t n_individuals, const TruthParams& truth, double split_frac,
                       SeededRng& rng, std::size_t n_points) {
  if (n_individuals < 2) throw std::invalid_argument("simulate: need at least two individuals");
  if (!(split_frac > 0.0 && split_frac < 1.0))
    throw std::invalid_argument("simulate: split fraction must lie in (0, 1)");
  if (!(truth.noise_var >= 0.0) || !std::isfinite(truth.noise_var))
    throw std::invalid_argument("simulate: noise variance must be finite and >= 0");

  const SmallMatrix chol = cholesky_spd(truth.lambda);
  const double noise_sd = std::sqrt(truth.noise_var);

  GrowthDataset data;
  data.times = make_ages(n_points);
  data.individuals.resize(n_individuals);

  PointJet jet;
  for (std::size_t i = 0; i < n_individuals; ++i) {
    const std::array<double, 3> z{rng.normal(), rng.normal(), rng.normal()};
    std::array<double, 3> u{};
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c <= r; ++c) u[r] += chol(r, c) * z[c];
    const RandomEffects effects = RandomEffects::from(u);

    Individual& ind = data.individuals[i];
    ind.id = static_cast<long>(i + 1);
    ind.truth = effects;
    ind.y.resize(n_points);
    for (std::size_t j = 0; j < n_points; ++j) {
      truth.decoder.evaluate(data.times[j], effects, jet);
      ind.y[j] = jet.value + noise_sd * rng.normal();
    }
  }

  std::vector<std::size_t> order(n_individuals);
  for (std::size_t i = 0; i < n_individuals; ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::llround(split_frac * static_cast<double>(n_individuals)));
  for (std::size_t k = 0; k < n_individuals; ++k)
    data.individuals[order[k]].split = k < n_train ? Split::train : Split::validation;
  return data;
}

}  // namespace deepsitar
