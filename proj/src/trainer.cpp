#include "deepsitar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace deepsitar {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be positive");
  if (final_learning_rate && !(*final_learning_rate > 0.0 && std::isfinite(*final_learning_rate)))
    throw std::invalid_argument("final learning rate must be positive");
  if (!(jitter > 0.0)) throw std::invalid_argument("jitter must be positive");
  if (gradient_clip && !(*gradient_clip > 0.0))
    throw std::invalid_argument("gradient clip must be positive");
  if (n_seg < 1 || degree < 0) throw std::invalid_argument("invalid spline configuration");
  for (std::size_t h : hidden)
    if (h == 0) throw std::invalid_argument("hidden layer sizes must be positive");
}

double TrainConfig::step_size(std::size_t epoch) const {
  if (!final_learning_rate || epochs < 2) return learning_rate;
  const double frac = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return learning_rate * std::pow(*final_learning_rate / learning_rate, frac);
}

CovarianceEstimate estimate_covariance(const SmallMatrix& effects, double jitter,
                                       std::size_t epoch) {
  if (effects.cols() != 3) throw DimMismatch("estimate_covariance: expected N x 3 effects");
  const std::size_t n = effects.rows();
  if (n < 2) throw TooFewIndividuals("estimate_covariance: need at least two individuals");

  std::array<double, 3> mean{};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) mean[k] += effects(i, k);
  for (double& m : mean) m /= static_cast<double>(n);

  SmallMatrix lambda(3, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c <= r; ++c)
        lambda(r, c) += (effects(i, r) - mean[r]) * (effects(i, c) - mean[c]);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c <= r; ++c) {
      lambda(r, c) /= static_cast<double>(n - 1);
      lambda(c, r) = lambda(r, c);
    }
  for (std::size_t k = 0; k < 3; ++k) lambda(k, k) += jitter;

  CovarianceEstimate cov;
  cov.inverse = spd_inverse(lambda);
  cov.lambda = std::move(lambda);
  cov.epoch = epoch;
  return cov;
}

double penalty(const RandomEffects& re, const CovarianceEstimate& cov) {
  const auto u = re.as_array();
  double q = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) q += u[r] * cov.inverse(r, c) * u[c];
  return std::max(q, 0.0);
}

std::size_t TrainedModel::parameter_count() const {
  return encoder.parameter_count() + decoder.alpha().size();
}

std::vector<double> TrainedModel::parameters() const {
  std::vector<double> p = encoder.parameters();
  p.insert(p.end(), decoder.alpha().begin(), decoder.alpha().end());
  return p;
}

void TrainedModel::set_parameters(std::span<const double> params) {
  if (params.size() != parameter_count()) throw DimMismatch("model: wrong parameter count");
  const std::size_t n_enc = encoder.parameter_count();
  encoder.set_parameters(params.first(n_enc));
  auto alpha = decoder.mutable_alpha();
  std::copy(params.begin() + static_cast<std::ptrdiff_t>(n_enc), params.end(), alpha.begin());
}

RandomEffects TrainedModel::effects(std::span<const double> y) const {
  return encode(encoder, standardizer, y);
}

namespace {

// Encoder passes for a group of individuals, kept so the backward pass can
// reuse them.
struct GroupForward {
  std::vector<ForwardTrace> traces;
  SmallMatrix effects;
};

GroupForward forward_group(const EncoderNet& net, const Standardizer& scaler,
                           const GrowthDataset& data, std::span<const std::size_t> members) {
  GroupForward out;
  out.traces.resize(members.size());
  out.effects = SmallMatrix(members.size(), 3);
  for (std::size_t k = 0; k < members.size(); ++k) {
    forward(net, scaler.apply(data.individuals.at(members[k]).y), out.traces[k]);
    const auto& u = out.traces[k].activations.back();
    for (std::size_t c = 0; c < 3; ++c) out.effects(k, c) = u[c];
  }
  return out;
}

std::array<double, 3> penalty_gradient(const std::array<double, 3>& u,
                                       const CovarianceEstimate& cov) {
  std::array<double, 3> g{};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) g[r] += 2.0 * cov.inverse(r, c) * u[c];
  return g;
}

LossEvaluation accumulate_autoencoder(const TrainedModel& model, const GrowthDataset& data,
                                      std::span<const std::size_t> members,
                                      const GroupForward& fwd, const CovarianceEstimate& cov,
                                      bool penalty_on, bool with_gradient) {
  LossEvaluation out;
  const std::size_t n_enc = model.encoder.parameter_count();
  if (with_gradient) out.gradient.assign(model.parameter_count(), 0.0);
  std::span<double> grad_enc;
  std::span<double> grad_alpha;
  if (with_gradient) {
    grad_enc = std::span<double>(out.gradient).first(n_enc);
    grad_alpha = std::span<double>(out.gradient).subspan(n_enc);
  }

  PointJet jet;
  const auto& times = data.times;
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto& y = data.individuals.at(members[k]).y;
    const auto row = fwd.effects.row(k);
    const RandomEffects re = RandomEffects::from(row);
    std::array<double, 3> upstream{};
    double sse = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
      model.decoder.evaluate(times[j], re, jet);
      out.out_of_domain += jet.out_of_domain ? 1 : 0;
      const double resid = y[j] - jet.value;
      sse += resid * resid;
      if (!with_gradient) continue;
      const double d_yhat = -2.0 * resid;
      upstream[0] += d_yhat;
      upstream[1] += d_yhat * jet.d_b1;
      upstream[2] += d_yhat * jet.d_c1;
      for (std::size_t i = 0; i < jet.basis_values.size(); ++i)
        grad_alpha[jet.first + i] += d_yhat * jet.basis_values[i];
    }
    out.reconstruction += sse;
    if (penalty_on) {
      out.penalty += penalty(re, cov);
      if (with_gradient) {
        const auto pg = penalty_gradient(re.as_array(), cov);
        for (std::size_t c = 0; c < 3; ++c) upstream[c] += pg[c];
      }
    }
    if (with_gradient) backward(model.encoder, fwd.traces[k], upstream, grad_enc);
  }

  const double scale = 1.0 / static_cast<double>(members.size());
  out.reconstruction *= scale;
  out.penalty *= scale;
  out.loss = out.reconstruction + out.penalty;
  for (double& g : out.gradient) g *= scale;
  return out;
}

LossEvaluation accumulate_supervised(const EncoderNet& net, const GrowthDataset& data,
                                     std::span<const std::size_t> members,
                                     const GroupForward& fwd, const CovarianceEstimate& cov,
                                     bool penalty_on, bool with_gradient) {
  LossEvaluation out;
  if (with_gradient) out.gradient.assign(net.parameter_count(), 0.0);
  for (std::size_t k = 0; k < members.size(); ++k) {
    const auto& truth = data.individuals.at(members[k]).truth;
    if (!truth) throw MissingGroundTruth("supervised training needs true random effects");
    const auto target = truth->as_array();
    const RandomEffects re = RandomEffects::from(fwd.effects.row(k));
    const auto u = re.as_array();
    std::array<double, 3> upstream{};
    for (std::size_t c = 0; c < 3; ++c) {
      const double diff = u[c] - target[c];
      out.reconstruction += diff * diff;
      upstream[c] = 2.0 * diff;
    }
    if (penalty_on) {
      out.penalty += penalty(re, cov);
      const auto pg = penalty_gradient(u, cov);
      for (std::size_t c = 0; c < 3; ++c) upstream[c] += pg[c];
    }
    if (with_gradient) backward(net, fwd.traces[k], upstream, out.gradient);
  }
  const double scale = 1.0 / static_cast<double>(members.size());
  out.reconstruction *= scale;
  out.penalty *= scale;
  out.loss = out.reconstruction + out.penalty;
  for (double& g : out.gradient) g *= scale;
  return out;
}

void clip_gradient(std::vector<double>& grad, const std::optional<double>& clip) {
  if (!clip) return;
  double norm2 = 0.0;
  for (double g : grad) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  if (norm > *clip) {
    const double s = *clip / norm;
    for (double& g : grad) g *= s;
  }
}

void require_finite(double loss, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw DivergenceDetected("loss became non-finite at epoch " + std::to_string(epoch) +
                             "; lower the learning rate");
  }
}

void apply_update(TrainedModel& model, const std::vector<double>& grad, double lr) {
  const std::size_t n_enc = model.encoder.parameter_count();
  model.encoder.add_scaled(grad, lr);
  auto alpha = model.decoder.mutable_alpha();
  for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] -= lr * grad[n_enc + i];
}

std::vector<std::vector<double>> rows_of(const GrowthDataset& data,
                                         std::span<const std::size_t> members) {
  std::vector<std::vector<double>> rows;
  rows.reserve(members.size());
  for (std::size_t i : members) rows.push_back(data.individuals[i].y);
  return rows;
}

std::vector<std::size_t> encoder_dims(std::size_t input, const TrainConfig& config) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(3);
  return dims;
}

}  // namespace

LossEvaluation autoencoder_loss(const TrainedModel& model, const GrowthDataset& data,
                                std::span<const std::size_t> members,
                                const CovarianceEstimate& cov, bool penalty_on,
                                bool with_gradient) {
  if (members.empty()) throw std::invalid_argument("autoencoder_loss: empty split");
  const GroupForward fwd = forward_group(model.encoder, model.standardizer, data, members);
  return accumulate_autoencoder(model, data, members, fwd, cov, penalty_on, with_gradient);
}

LossEvaluation supervised_loss(const EncoderNet& net, const Standardizer& scaler,
                               const GrowthDataset& data, std::span<const std::size_t> members,
                               const CovarianceEstimate& cov, bool penalty_on,
                               bool with_gradient) {
  if (members.empty()) throw std::invalid_argument("supervised_loss: empty split");
  const GroupForward fwd = forward_group(net, scaler, data, members);
  return accumulate_supervised(net, data, members, fwd, cov, penalty_on, with_gradient);
}

std::vector<double> fit_population_alpha(const BSplineBasis& basis, const FixedEffects& fixed,
                                         const GrowthDataset& data) {
  const auto train = data.indices(Split::train);
  if (train.empty()) throw TooFewIndividuals("no training individuals");
  const std::size_t n = data.times.size();

  // Balanced design: pooled least squares equals least squares on the mean
  // curve.
  std::vector<double> mean_curve(n, 0.0);
  for (std::size_t i : train)
    for (std::size_t j = 0; j < n; ++j) mean_curve[j] += data.individuals[i].y[j];
  for (double& v : mean_curve) v /= static_cast<double>(train.size());

  std::vector<double> warped(n);
  for (std::size_t j = 0; j < n; ++j) warped[j] = warp_time(data.times[j], fixed, {});
  const SmallMatrix design = design_matrix(basis, warped);
  const SmallMatrix dt = transpose(design);
  SmallMatrix normal = dt * design;
  std::vector<double> rhs = multiply(dt, mean_curve);

  // Small second-difference ridge so coefficients of basis functions with no
  // data support follow their neighbours instead of making the system
  // singular.
  const std::size_t m = basis.size();
  if (m >= 3) {
    double trace = 0.0;
    for (std::size_t i = 0; i < m; ++i) trace += normal(i, i);
    const double ridge = 1e-6 * trace / static_cast<double>(m);
    for (std::size_t r = 0; r + 2 < m; ++r) {
      const std::array<double, 3> d{1.0, -2.0, 1.0};
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) normal(r + a, r + b) += ridge * d[a] * d[b];
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) normal(i, i) *= 1.0 + 1e-12;
  }
  return spd_solve(normal, rhs);
}

TrainedModel initialize_model(const GrowthDataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  const auto train = data.indices(Split::train);
  if (train.size() < 2) throw TooFewIndividuals("training split needs at least two individuals");

  const double age_lo = *std::min_element(data.times.begin(), data.times.end());
  const double age_hi = *std::max_element(data.times.begin(), data.times.end());
  const FixedEffects fixed{0.0, 0.5 * (age_lo + age_hi), 0.0};
  BSplineBasis basis =
      make_basis(age_lo - fixed.b0, age_hi - fixed.b0, config.n_seg, config.degree, config.margin);
  std::vector<double> alpha = fit_population_alpha(basis, fixed, data);

  SeededRng rng(config.seed);
  const auto dims = encoder_dims(data.points_per_individual(), config);
  const auto rows = rows_of(data, train);

  TrainedModel model{init_encoder(dims, rng), Standardizer::fit(rows),
                     SitarDecoder(std::move(basis), std::move(alpha), fixed),
                     CovarianceEstimate{}, config, {}};
  const GroupForward fwd = forward_group(model.encoder, model.standardizer, data, train);
  model.covariance = estimate_covariance(fwd.effects, config.jitter, 0);
  return model;
}

AutoencoderResult train_autoencoder(const GrowthDataset& data, const TrainConfig& config) {
  TrainedModel model = initialize_model(data, config);
  TrainHistory history;
  const auto train = data.indices(Split::train);
  const auto validation = data.indices(Split::validation);

  // Minibatch order draws from a stream separate from the initialization.
  SeededRng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = train;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool penalize = config.penalty_on && epoch >= config.penalty_warmup;
    GroupForward fwd = forward_group(model.encoder, model.standardizer, data, train);
    CovarianceEstimate cov = estimate_covariance(fwd.effects, config.jitter, epoch);

    EpochRecord record;
    record.epoch = epoch;
    if (!validation.empty()) {
      const LossEvaluation val = autoencoder_loss(model, data, validation, cov, penalize, false);
      record.val_loss = val.loss;
      record.val_reconstruction = val.reconstruction;
    }

    if (config.full_batch()) {
      LossEvaluation eval = accumulate_autoencoder(model, data, train, fwd, cov, penalize, true);
      record.train_loss = eval.loss;
      record.train_reconstruction = eval.reconstruction;
      record.ood_count = eval.out_of_domain;
      require_finite(eval.loss, epoch);
      clip_gradient(eval.gradient, config.gradient_clip);
      apply_update(model, eval.gradient, config.step_size(epoch));
    } else {
      const LossEvaluation eval =
          accumulate_autoencoder(model, data, train, fwd, cov, penalize, false);
      record.train_loss = eval.loss;
      record.train_reconstruction = eval.reconstruction;
      record.ood_count = eval.out_of_domain;
      require_finite(eval.loss, epoch);
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t stop = std::min(order.size(), start + config.batch_size);
        const std::span<const std::size_t> batch(order.data() + start, stop - start);
        LossEvaluation step = autoencoder_loss(model, data, batch, cov, penalize, true);
        require_finite(step.loss, epoch);
        clip_gradient(step.gradient, config.gradient_clip);
        apply_update(model, step.gradient, config.step_size(epoch));
      }
    }
    history.records.push_back(record);
  }

  const GroupForward final_fwd = forward_group(model.encoder, model.standardizer, data, train);
  model.covariance = estimate_covariance(final_fwd.effects, config.jitter, config.epochs);
  return {std::move(model), std::move(history)};
}

SupervisedResult train_supervised(const GrowthDataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (!data.has_truth()) throw MissingGroundTruth("dataset carries no true random effects");
  const auto train = data.indices(Split::train);
  const auto validation = data.indices(Split::validation);
  if (train.size() < 2) throw TooFewIndividuals("training split needs at least two individuals");

  SeededRng rng(config.seed);
  SupervisedResult result{init_encoder(encoder_dims(data.points_per_individual(), config), rng),
                          Standardizer::fit(rows_of(data, train)), CovarianceEstimate{}, {}};
  SeededRng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = train;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const bool penalize = config.penalty_on && epoch >= config.penalty_warmup;
    GroupForward fwd = forward_group(result.encoder, result.standardizer, data, train);
    const CovarianceEstimate cov = estimate_covariance(fwd.effects, config.jitter, epoch);

    EpochRecord record;
    record.epoch = epoch;
    if (!validation.empty()) {
      const LossEvaluation val = supervised_loss(result.encoder, result.standardizer, data,
                                                 validation, cov, penalize, false);
      record.val_loss = val.loss;
      record.val_reconstruction = val.reconstruction;
    }
    LossEvaluation eval = accumulate_supervised(result.encoder, data, train, fwd, cov, penalize,
                                                config.full_batch());
    record.train_loss = eval.loss;
    record.train_reconstruction = eval.reconstruction;
    require_finite(eval.loss, epoch);

    if (config.full_batch()) {
      clip_gradient(eval.gradient, config.gradient_clip);
      result.encoder.add_scaled(eval.gradient, config.step_size(epoch));
    } else {
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t stop = std::min(order.size(), start + config.batch_size);
        const std::span<const std::size_t> batch(order.data() + start, stop - start);
        LossEvaluation step = supervised_loss(result.encoder, result.standardizer, data, batch,
                                              cov, penalize, true);
        require_finite(step.loss, epoch);
        clip_gradient(step.gradient, config.gradient_clip);
        result.encoder.add_scaled(step.gradient, config.step_size(epoch));
      }
    }
    result.history.records.push_back(record);
  }

  const GroupForward final_fwd = forward_group(result.encoder, result.standardizer, data, train);
  result.covariance = estimate_covariance(final_fwd.effects, config.jitter, config.epochs);
  return result;
}

}  // namespace deepsitar
