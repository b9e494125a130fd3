#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "deepsitar/decoder.hpp"
#include "deepsitar/numerics.hpp"

namespace deepsitar {

enum class Split { train, validation };

std::string_view to_string(Split s);
Split split_from_string(std::string_view name);

struct Individual {
  long id = 0;
  std::vector<double> y;
  std::optional<RandomEffects> truth;
  Split split = Split::train;
};

/// Balanced longitudinal cohort: every individual is measured at `times`.
struct GrowthDataset {
  std::vector<double> times;
  std::vector<Individual> individuals;

  std::size_t points_per_individual() const { return times.size(); }
  /// Positions (into `individuals`) of the given split, in stored order.
  std::vector<std::size_t> indices(Split s) const;
  std::size_t count(Split s) const;
  bool has_truth() const;
  /// Throws std::invalid_argument when the design is unbalanced or a value
  /// is non-finite.
  void validate() const;
};

/// Generating parameters of a simulated cohort. The fixed effects live in
/// the decoder.
struct TruthParams {
  SitarDecoder decoder;
  SmallMatrix lambda;
  double noise_var = 0.4;
};

/// Documented default truth: cubic basis with 9 segments over the centred
/// age range 9..18 (b0 = 13.5), no margin; a curve rising from 133 to 171 cm
/// with a pubertal spurt; diagonal-dominant lambda and noise variance 0.4.
/// data/default_truth.json holds the same values.
TruthParams default_truth();

/// n equally spaced ages from 9 to 18 years.
std::vector<double> make_ages(std::size_t n_points);

/// Draws N individuals.
///
/// RNG consumption order: for each individual, three standard normals for
/// the effects (mapped through the Cholesky factor of lambda), then one
/// normal per time point for noise; afterwards one Fisher-Yates shuffle of
/// the individual positions, whose first round(split_frac*N) entries form
/// the training split.
GrowthDataset simulate(std::size_t n_individuals, const TruthParams& truth, double split_frac,
                       SeededRng& rng, std::size_t n_points = 20);

}  // namespace deepsitar
