#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "deepsitar/decoder.hpp"
#include "deepsitar/simulator.hpp"
#include "deepsitar/trainer.hpp"

namespace deepsitar {

class EmptySplit : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MseSummary {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> per_individual;
  std::vector<long> ids;
};

/// MSE_i = (1/n)||y_i - yhat_i||^2 for every individual of the split; sd
/// uses the N-1 denominator (0 for a single individual).
MseSummary per_individual_mse(const TrainedModel& model, const GrowthDataset& data, Split split);

/// Same summary against the noiseless truth curves instead of the noisy
/// measurements. Requires true effects in the dataset.
MseSummary per_individual_curve_mse(const TrainedModel& model, const GrowthDataset& data,
                                    Split split, const TruthParams& truth);

/// |sigma^2_true - sigma^2_hat| per effect, sigma^2_hat from the diagonal of
/// the model's final covariance estimate.
std::array<double, 3> variance_recovery(const TrainedModel& model, const TruthParams& truth);

struct Prediction {
  RandomEffects effects;
  std::vector<double> curve;
  std::size_t out_of_domain = 0;
};

/// Encode y_new and decode at t_new; the model is not modified.
Prediction predict_new_individual(const TrainedModel& model, std::span<const double> y_new,
                                  std::span<const double> t_new);

struct OracleOptions {
  /// Include u^T lambda^-1 u in the objective. The grid ranges always come
  /// from the covariance diagonal.
  bool penalize = true;
  std::size_t grid_steps = 25;
  double grid_sd = 3.0;
  std::size_t max_iterations = 50;
  double tolerance = 1e-12;
};

struct OracleResult {
  RandomEffects effects;
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// ||y - decode(t, u)||^2 (+ u^T lambda^-1 u when penalize).
double oracle_objective(std::span<const double> t, std::span<const double> y,
                        const SitarDecoder& dec, const CovarianceEstimate& lambda,
                        const RandomEffects& u, bool penalize);

/// Per-individual penalized nonlinear least squares for the random effects
/// with the decoder held fixed: grid search over (b1, c1) with a1 solved in
/// closed form, then Gauss-Newton with step halving. When Gauss-Newton does
/// not converge the best point found is returned with converged = false.
OracleResult oracle_fit_individual(std::span<const double> t, std::span<const double> y,
                                   const SitarDecoder& dec, const CovarianceEstimate& lambda,
                                   const OracleOptions& options = {});

struct EffectCorrelation {
  std::array<double, 3> r{};
  /// Set when one side has zero variance; r is then reported as 0.
  std::array<bool, 3> degenerate{};
};

/// Pearson correlation of paired samples; 0 with degenerate = true when
/// either side is constant.
double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr);

EffectCorrelation correlate_effects(std::span<const RandomEffects> a,
                                    std::span<const RandomEffects> b);

/// Encoder effects vs the dataset's true effects on one split.
EffectCorrelation effect_recovery_correlation(const TrainedModel& model, const GrowthDataset& data,
                                              Split split);

struct SplitReport {
  Split split = Split::train;
  std::size_t individuals = 0;
  /// Training objective under the model's final covariance estimate.
  double loss = 0.0;
  MseSummary mse;
  std::optional<MseSummary> curve_mse;
  std::optional<EffectCorrelation> correlation;
};

struct FitReport {
  std::size_t n_individuals = 0;
  int n_seg = 0;
  std::vector<SplitReport> splits;
  std::optional<std::array<double, 3>> variance_differences;
  std::array<double, 3> sigma2_hat{};
  std::optional<std::array<double, 3>> sigma2_true;
  std::size_t out_of_domain = 0;
};

/// Everything the evaluate command reports. Truth-dependent sections are
/// filled only when the dataset carries true effects and `truth` is given.
FitReport build_report(const TrainedModel& model, const GrowthDataset& data,
                       const TruthParams* truth);

}  // namespace deepsitar
