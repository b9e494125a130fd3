#include "deepsitar/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepsitar {

namespace {

MseSummary summarize(std::vector<double> per_individual, std::vector<long> ids) {
  MseSummary s;
  const auto n = static_cast<double>(per_individual.size());
  for (double v : per_individual) s.mean += v;
  s.mean /= n;
  if (per_individual.size() > 1) {
    double ss = 0.0;
    for (double v : per_individual) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (n - 1.0));
  }
  s.per_individual = std::move(per_individual);
  s.ids = std::move(ids);
  return s;
}

double mean_squared_difference(std::span<const double> a, std::span<const double> b) {
  double sse = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) sse += (a[j] - b[j]) * (a[j] - b[j]);
  return sse / static_cast<double>(a.size());
}

}  // namespace

MseSummary per_individual_mse(const TrainedModel& model, const GrowthDataset& data, Split split) {
  const auto members = data.indices(split);
  if (members.empty()) throw EmptySplit("per_individual_mse: split has no individuals");
  std::vector<double> values;
  std::vector<long> ids;
  for (std::size_t i : members) {
    const auto& ind = data.individuals[i];
    const Decoded fit = decode(model.decoder, data.times, model.effects(ind.y));
    values.push_back(mean_squared_difference(ind.y, fit.values));
    ids.push_back(ind.id);
  }
  return summarize(std::move(values), std::move(ids));
}

MseSummary per_individual_curve_mse(const TrainedModel& model, const GrowthDataset& data,
                                    Split split, const TruthParams& truth) {
  const auto members = data.indices(split);
  if (members.empty()) throw EmptySplit("per_individual_curve_mse: split has no individuals");
  std::vector<double> values;
  std::vector<long> ids;
  for (std::size_t i : members) {
    const auto& ind = data.individuals[i];
    if (!ind.truth) throw MissingGroundTruth("curve MSE needs true random effects");
    const Decoded fit = decode(model.decoder, data.times, model.effects(ind.y));
    const Decoded exact = decode(truth.decoder, data.times, *ind.truth);
    values.push_back(mean_squared_difference(exact.values, fit.values));
    ids.push_back(ind.id);
  }
  return summarize(std::move(values), std::move(ids));
}

std::array<double, 3> variance_recovery(const TrainedModel& model, const TruthParams& truth) {
  std::array<double, 3> out{};
  for (std::size_t k = 0; k < 3; ++k)
    out[k] = std::abs(truth.lambda(k, k) - model.covariance.lambda(k, k));
  return out;
}

Prediction predict_new_individual(const TrainedModel& model, std::span<const double> y_new,
                                  std::span<const double> t_new) {
  if (y_new.size() != model.encoder.input_dim())
    throw DimMismatch("predict: model expects " + std::to_string(model.encoder.input_dim()) +
                      " measurements, got " + std::to_string(y_new.size()));
  Prediction p;
  p.effects = model.effects(y_new);
  Decoded curve = decode(model.decoder, t_new, p.effects);
  p.curve = std::move(curve.values);
  p.out_of_domain = curve.out_of_domain;
  return p;
}

double oracle_objective(std::span<const double> t, std::span<const double> y,
                        const SitarDecoder& dec, const CovarianceEstimate& lambda,
                        const RandomEffects& u, bool penalize) {
  const Decoded fit = decode(dec, t, u);
  double obj = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) obj += (y[j] - fit.values[j]) * (y[j] - fit.values[j]);
  if (penalize) obj += penalty(u, lambda);
  return obj;
}

OracleResult oracle_fit_individual(std::span<const double> t, std::span<const double> y,
                                   const SitarDecoder& dec, const CovarianceEstimate& lambda,
                                   const OracleOptions& options) {
  if (t.size() != y.size() || t.empty())
    throw DimMismatch("oracle_fit_individual: times and measurements differ in length");
  const std::size_t n = t.size();
  const SmallMatrix& prec = lambda.inverse;
  const bool pen = options.penalize;

  // Coarse grid over tempo and velocity; size enters linearly and is solved
  // exactly at every grid point.
  const double sd_b = std::sqrt(lambda.lambda(1, 1));
  const double sd_c = std::sqrt(lambda.lambda(2, 2));
  const std::size_t steps = std::max<std::size_t>(options.grid_steps, 1);
  auto grid_value = [&](double sd, std::size_t i) {
    if (steps == 1) return 0.0;
    return -options.grid_sd * sd + 2.0 * options.grid_sd * sd * static_cast<double>(i) /
                                       static_cast<double>(steps - 1);
  };

  OracleResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (std::size_t ib = 0; ib < steps; ++ib) {
    for (std::size_t ic = 0; ic < steps; ++ic) {
      RandomEffects u{0.0, grid_value(sd_b, ib), grid_value(sd_c, ic)};
      const Decoded base = decode(dec, t, u);
      double resid_sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) resid_sum += y[j] - base.values[j];
      u.a1 = pen ? (resid_sum - prec(0, 1) * u.b1 - prec(0, 2) * u.c1) /
                       (static_cast<double>(n) + prec(0, 0))
                 : resid_sum / static_cast<double>(n);
      const double obj = oracle_objective(t, y, dec, lambda, u, pen);
      if (obj < best.objective) {
        best.objective = obj;
        best.effects = u;
      }
    }
  }

  // Gauss-Newton on (a1, b1, c1) with step halving.
  RandomEffects u = best.effects;
  double current = best.objective;
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    best.iterations = iter + 1;
    const DecoderPartials partials = decode_gradients(dec, t, u);
    const Decoded fit = decode(dec, t, u);
    SmallMatrix normal(3, 3);
    std::array<double, 3> rhs{};
    for (std::size_t j = 0; j < n; ++j) {
      const std::array<double, 3> row{partials.d_a1[j], partials.d_b1[j], partials.d_c1[j]};
      const double r = y[j] - fit.values[j];
      for (std::size_t a = 0; a < 3; ++a) {
        rhs[a] += row[a] * r;
        for (std::size_t b = 0; b < 3; ++b) normal(a, b) += row[a] * row[b];
      }
    }
    if (pen) {
      const auto uu = u.as_array();
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
          normal(a, b) += prec(a, b);
          rhs[a] -= prec(a, b) * uu[b];
        }
    }

    std::vector<double> delta;
    try {
      delta = spd_solve(normal, rhs);
    } catch (const NotPositiveDefinite&) {
      double trace = normal(0, 0) + normal(1, 1) + normal(2, 2);
      for (std::size_t a = 0; a < 3; ++a) normal(a, a) += 1e-10 * (trace + 1.0);
      try {
        delta = spd_solve(normal, rhs);
      } catch (const NotPositiveDefinite&) {
        break;
      }
    }

    double step = 1.0;
    bool improved = false;
    RandomEffects trial = u;
    double trial_obj = current;
    for (int halving = 0; halving < 40; ++halving) {
      trial = {u.a1 + step * delta[0], u.b1 + step * delta[1], u.c1 + step * delta[2]};
      trial_obj = oracle_objective(t, y, dec, lambda, trial, pen);
      if (trial_obj <= current) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      // No descent along the Gauss-Newton direction: stationary point.
      best.converged = true;
      break;
    }
    const double change = current - trial_obj;
    const double move = std::max({std::abs(trial.a1 - u.a1), std::abs(trial.b1 - u.b1),
                                  std::abs(trial.c1 - u.c1)});
    u = trial;
    current = trial_obj;
    if (change <= options.tolerance * (1.0 + current) || move <= 1e-12) {
      best.converged = true;
      break;
    }
  }
  if (current <= best.objective) {
    best.effects = u;
    best.objective = current;
  }
  return best;
}

double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate) {
  if (x.size() != y.size() || x.empty()) throw DimMismatch("pearson: samples differ in length");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const bool flat = !(sxx > 0.0) || !(syy > 0.0);
  if (degenerate) *degenerate = flat;
  if (flat) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

EffectCorrelation correlate_effects(std::span<const RandomEffects> a,
                                    std::span<const RandomEffects> b) {
  if (a.size() != b.size()) throw DimMismatch("correlate_effects: sample sizes differ");
  EffectCorrelation out;
  std::vector<double> xa(a.size());
  std::vector<double> xb(b.size());
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      xa[i] = a[i].as_array()[k];
      xb[i] = b[i].as_array()[k];
    }
    bool flat = false;
    out.r[k] = pearson(xa, xb, &flat);
    out.degenerate[k] = flat;
  }
  return out;
}

EffectCorrelation effect_recovery_correlation(const TrainedModel& model, const GrowthDataset& data,
                                              Split split) {
  const auto members = data.indices(split);
  if (members.empty()) throw EmptySplit("effect_recovery_correlation: split has no individuals");
  std::vector<RandomEffects> predicted;
  std::vector<RandomEffects> truth;
  for (std::size_t i : members) {
    const auto& ind = data.individuals[i];
    if (!ind.truth) throw MissingGroundTruth("dataset carries no true random effects");
    predicted.push_back(model.effects(ind.y));
    truth.push_back(*ind.truth);
  }
  return correlate_effects(predicted, truth);
}

FitReport build_report(const TrainedModel& model, const GrowthDataset& data,
                       const TruthParams* truth) {
  FitReport report;
  report.n_individuals = data.individuals.size();
  report.n_seg = model.decoder.basis().segments();
  const bool with_truth = truth != nullptr && data.has_truth();

  for (Split split : {Split::train, Split::validation}) {
    if (data.count(split) == 0) continue;
    SplitReport sr;
    sr.split = split;
    sr.individuals = data.count(split);
    const auto members = data.indices(split);
    sr.loss = autoencoder_loss(model, data, members, model.covariance, model.config.penalty_on,
                               false)
                  .loss;
    sr.mse = per_individual_mse(model, data, split);
    if (with_truth) {
      sr.curve_mse = per_individual_curve_mse(model, data, split, *truth);
      sr.correlation = effect_recovery_correlation(model, data, split);
    }
    report.splits.push_back(std::move(sr));
  }

  for (std::size_t k = 0; k < 3; ++k) report.sigma2_hat[k] = model.covariance.lambda(k, k);
  if (with_truth) {
    report.variance_differences = variance_recovery(model, *truth);
    report.sigma2_true = std::array<double, 3>{truth->lambda(0, 0), truth->lambda(1, 1),
                                               truth->lambda(2, 2)};
  }

  for (const auto& ind : data.individuals)
    report.out_of_domain += decode(model.decoder, data.times, model.effects(ind.y)).out_of_domain;
  return report;
}

}  // namespace deepsitar
