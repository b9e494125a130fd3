#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepsitar/decoder.hpp"
#include "deepsitar/encoder.hpp"
#include "deepsitar/numerics.hpp"
#include "deepsitar/simulator.hpp"

namespace deepsitar {

class TooFewIndividuals : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MissingGroundTruth : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DivergenceDetected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 22000;
  double learning_rate = 1e-3;
  /// When set, the step size decays geometrically from learning_rate at the
  /// first epoch to this value at the last one.
  std::optional<double> final_learning_rate;
  /// 0 selects full-batch updates (one step per epoch).
  std::size_t batch_size = 0;
  double jitter = 1e-6;
  std::optional<double> gradient_clip = 10.0;
  bool penalty_on = true;
  /// Epochs at the start during which the covariance penalty is skipped.
  std::size_t penalty_warmup = 50;
  std::uint64_t seed = 0;

  std::vector<std::size_t> hidden = {30, 30};
  int n_seg = 10;
  int degree = 3;
  double margin = 0.15;

  bool full_batch() const { return batch_size == 0; }
  double step_size(std::size_t epoch) const;
  void validate() const;
};

struct CovarianceEstimate {
  SmallMatrix lambda;
  SmallMatrix inverse;
  std::size_t epoch = 0;
};

/// Sample covariance (N-1 denominator) of the rows of an N x 3 matrix plus
/// jitter * I, with its inverse.
CovarianceEstimate estimate_covariance(const SmallMatrix& effects, double jitter,
                                       std::size_t epoch = 0);

/// u^T lambda^-1 u.
double penalty(const RandomEffects& re, const CovarianceEstimate& cov);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_reconstruction = 0.0;
  double val_loss = 0.0;
  double val_reconstruction = 0.0;
  std::size_t ood_count = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

struct TrainedModel {
  EncoderNet encoder;
  Standardizer standardizer;
  SitarDecoder decoder;
  CovarianceEstimate covariance;
  TrainConfig config;
  std::string truth_hash;

  /// Trainable parameters: encoder (flat order) followed by alpha.
  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> params);

  RandomEffects effects(std::span<const double> y) const;
};

struct LossEvaluation {
  double loss = 0.0;
  double reconstruction = 0.0;
  double penalty = 0.0;
  /// d loss / d parameters in TrainedModel::parameters() order; empty when
  /// not requested.
  std::vector<double> gradient;
  std::size_t out_of_domain = 0;
};

/// (1/N) sum_i ||y_i - decode(t, encode(y_i))||^2 + u_i^T lambda^-1 u_i over
/// the given individuals. The covariance is a constant of the loss.
LossEvaluation autoencoder_loss(const TrainedModel& model, const GrowthDataset& data,
                                std::span<const std::size_t> members,
                                const CovarianceEstimate& cov, bool penalty_on,
                                bool with_gradient = true);

/// Untrained model: standardizer from the training split, Glorot encoder,
/// alpha from least squares on the pooled training data, b0 at the centre of
/// the age range.
TrainedModel initialize_model(const GrowthDataset& data, const TrainConfig& config);

/// Least-squares spline coefficients for the pooled training curve at zero
/// random effects.
std::vector<double> fit_population_alpha(const BSplineBasis& basis, const FixedEffects& fixed,
                                         const GrowthDataset& data);

struct AutoencoderResult {
  TrainedModel model;
  TrainHistory history;
};

AutoencoderResult train_autoencoder(const GrowthDataset& data, const TrainConfig& config);

/// (1/N) sum_i ||encode(y_i) - u_i||^2 + penalty against the known effects.
LossEvaluation supervised_loss(const EncoderNet& net, const Standardizer& scaler,
                               const GrowthDataset& data, std::span<const std::size_t> members,
                               const CovarianceEstimate& cov, bool penalty_on,
                               bool with_gradient = true);

struct SupervisedResult {
  EncoderNet encoder;
  Standardizer standardizer;
  CovarianceEstimate covariance;
  TrainHistory history;
};

SupervisedResult train_supervised(const GrowthDataset& data, const TrainConfig& config);

}  // namespace deepsitar
