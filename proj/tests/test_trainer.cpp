#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "deepsitar/evaluator.hpp"
#include "deepsitar/simulator.hpp"
#include "deepsitar/trainer.hpp"

using namespace deepsitar;

namespace {

// Truth with (numerically) no random effects and no noise.
TruthParams flat_truth() {
  TruthParams t = default_truth();
  t.lambda = SmallMatrix::identity(3);
  for (double& v : t.lambda.entries()) v *= 1e-14;
  t.noise_var = 0.0;
  return t;
}

TrainedModel constant_output_model(const GrowthDataset& data, const TrainConfig& cfg,
                                   const RandomEffects& out) {
  TrainedModel model = initialize_model(data, cfg);
  auto params = model.parameters();
  const auto& layers = model.encoder.layers();
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l)
    pos += layers[l].weights.entries().size() + layers[l].bias.size();
  const auto& last = layers.back();
  for (std::size_t i = 0; i < last.weights.entries().size(); ++i) params[pos + i] = 0.0;
  pos += last.weights.entries().size();
  params[pos] = out.a1;
  params[pos + 1] = out.b1;
  params[pos + 2] = out.c1;
  model.set_parameters(params);
  return model;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("estimate_covariance examples") {
  SmallMatrix same(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    same(i, 0) = 1.0;
    same(i, 1) = -2.0;
    same(i, 2) = 0.5;
  }
  const auto c = estimate_covariance(same, 1e-6, 7);
  CHECK(max_abs_diff(c.lambda, SmallMatrix::diagonal(std::vector<double>{1e-6, 1e-6, 1e-6})) < 1e-18);
  CHECK(c.epoch == 7);

  SmallMatrix two(2, 3, {-1, 0, 0, 1, 0, 0});
  const auto d = estimate_covariance(two, 1e-6);
  CHECK(d.lambda(0, 0) == doctest::Approx(2.0 + 1e-6));
  CHECK(d.lambda(0, 1) == 0.0);
  CHECK(d.lambda(0, 2) == 0.0);
  CHECK(max_abs_diff(d.lambda * d.inverse, SmallMatrix::identity(3)) < 1e-8);

  CHECK_THROWS_AS(estimate_covariance(SmallMatrix(1, 3), 1e-6), TooFewIndividuals);
}

TEST_CASE("estimate_covariance is consistent on Gaussian draws") {
  const SmallMatrix lambda = default_truth().lambda;
  const SmallMatrix l = cholesky_spd(lambda);
  SeededRng rng(100);
  const std::size_t n = 100000;
  SmallMatrix draws(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double z[3] = {rng.normal(), rng.normal(), rng.normal()};
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c <= r; ++c) draws(i, r) += l(r, c) * z[c];
  }
  const auto est = estimate_covariance(draws, 1e-12);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const double scale = std::sqrt(lambda(r, r) * lambda(c, c));
      CHECK(std::abs(est.lambda(r, c) - lambda(r, c)) < 0.03 * scale);
    }
}

TEST_CASE("penalty examples") {
  CovarianceEstimate id{SmallMatrix::identity(3), SmallMatrix::identity(3), 0};
  CHECK(penalty({}, id) == 0.0);
  CHECK(penalty({1, 2, 3}, id) == 14.0);

  SeededRng rng(5);
  SmallMatrix b(3, 3);
  for (double& v : b.entries()) v = rng.normal();
  SmallMatrix a = transpose(b) * b;
  for (std::size_t i = 0; i < 3; ++i) a(i, i) += 0.5;
  const CovarianceEstimate cov{a, spd_inverse(a), 0};
  const RandomEffects u{rng.normal(), rng.normal(), rng.normal()};
  const auto x = spd_solve(a, u.as_array());
  CHECK(penalty(u, cov) == doctest::Approx(u.a1 * x[0] + u.b1 * x[1] + u.c1 * x[2]).epsilon(1e-12));
}

TEST_CASE("autoencoder loss on self-generated data is zero") {
  SeededRng rng(1);
  GrowthDataset data = simulate(6, flat_truth(), 0.5, rng);
  const TrainConfig cfg = quick_config();
  const RandomEffects fixed_out{1.5, 0.4, -0.05};
  TrainedModel model = constant_output_model(data, cfg, fixed_out);
  for (auto& ind : data.individuals) ind.y = decode(model.decoder, data.times, fixed_out).values;
  const auto members = data.indices(Split::train);
  const LossEvaluation e = autoencoder_loss(model, data, members, model.covariance, false);
  CHECK(std::abs(e.loss) < 1e-8);
}

TEST_CASE("zero model loss is the mean squared norm of y") {
  SeededRng rng(2);
  GrowthDataset data = simulate(5, default_truth(), 0.6, rng);
  TrainedModel model = initialize_model(data, quick_config());
  model.set_parameters(std::vector<double>(model.parameter_count(), 0.0));
  const auto members = data.indices(Split::train);
  double expected = 0.0;
  for (std::size_t i : members)
    for (double v : data.individuals[i].y) expected += v * v;
  expected /= static_cast<double>(members.size());
  const LossEvaluation e = autoencoder_loss(model, data, members, model.covariance, false, false);
  CHECK(e.loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(e.gradient.empty());
}

TEST_CASE("end-to-end gradient on a miniature model") {
  // N = 3 training individuals, m = 5 basis functions, encoder 4 -> 5 -> 3.
  TruthParams truth = default_truth();
  SeededRng rng(31);
  GrowthDataset data = simulate(4, truth, 0.75, rng, 4);
  TrainConfig cfg;
  cfg.n_seg = 2;
  cfg.hidden = {5};
  cfg.seed = 8;
  TrainedModel model = initialize_model(data, cfg);
  REQUIRE(model.decoder.basis().size() == 5);
  REQUIRE(model.encoder.dims() == std::vector<std::size_t>{4, 5, 3});
  const auto members = data.indices(Split::train);
  REQUIRE(members.size() == 3);

  auto params = model.parameters();
  for (double& p : params) p += 0.1 * rng.normal();
  model.set_parameters(params);
  const CovarianceEstimate cov = estimate_covariance(
      SmallMatrix(3, 3, {1.0, 0.2, 0.01, -2.0, -0.5, 0.03, 0.5, 0.9, -0.02}), 1e-6);

  for (bool pen : {false, true}) {
    const LossEvaluation e = autoencoder_loss(model, data, members, cov, pen);
    TrainedModel probe = model;
    auto f = [&](std::span<const double> p) {
      probe.set_parameters(p);
      return autoencoder_loss(probe, data, members, cov, pen, false).loss;
    };
    const auto fd = finite_diff_gradient(f, params, 1e-6);
    CHECK(testing::max_rel_err(e.gradient, fd, 1e-2) < 1e-4);
  }
}

TEST_CASE("covariance is a constant of the gradient") {
  SeededRng rng(32);
  GrowthDataset data = simulate(8, default_truth(), 0.75, rng);
  TrainConfig cfg = quick_config();
  cfg.hidden = {6};
  TrainedModel model = initialize_model(data, cfg);
  const auto members = data.indices(Split::train);
  const CovarianceEstimate cov = model.covariance;
  const auto g1 = autoencoder_loss(model, data, members, cov, true).gradient;
  // Perturbing a copy of the covariance leaves the gradient at the original
  // covariance untouched; the gradient is not taken through the estimate.
  CovarianceEstimate other = cov;
  other.lambda(0, 0) *= 2.0;
  other.inverse = spd_inverse(other.lambda);
  const auto g_other = autoencoder_loss(model, data, members, other, true).gradient;
  CHECK(autoencoder_loss(model, data, members, cov, true).gradient == g1);
  CHECK(g_other != g1);

  // Differentiating through a covariance re-estimated from the outputs gives
  // a different vector.
  TrainedModel probe = model;
  auto through = [&](std::span<const double> p) {
    probe.set_parameters(p);
    SmallMatrix effects(members.size(), 3);
    for (std::size_t r = 0; r < members.size(); ++r) {
      const auto u = probe.effects(data.individuals[members[r]].y).as_array();
      for (std::size_t k = 0; k < 3; ++k) effects(r, k) = u[k];
    }
    const auto c = estimate_covariance(effects, cfg.jitter);
    return autoencoder_loss(probe, data, members, c, true, false).loss;
  };
  const auto params = model.parameters();
  const auto fd_through = finite_diff_gradient(through, params, 1e-6);
  CHECK(testing::max_rel_err(g1, fd_through, 1e-2) > 1e-3);
}

TEST_CASE("epochs = 0 returns the initialized model") {
  SeededRng rng(3);
  GrowthDataset data = simulate(10, default_truth(), 0.8, rng);
  TrainConfig cfg = quick_config();
  cfg.epochs = 0;
  const AutoencoderResult r = train_autoencoder(data, cfg);
  CHECK(r.history.records.empty());
  CHECK(r.model.parameters() == initialize_model(data, cfg).parameters());
  CHECK(r.model.decoder.basis().size() == 13);
}

TEST_CASE("training is deterministic") {
  SeededRng rng(4);
  GrowthDataset data = simulate(20, default_truth(), 0.8, rng);
  TrainConfig cfg = quick_config();
  cfg.epochs = 30;
  cfg.batch_size = 4;
  const AutoencoderResult a = train_autoencoder(data, cfg);
  const AutoencoderResult b = train_autoencoder(data, cfg);
  CHECK(a.model.parameters() == b.model.parameters());
  REQUIRE(a.history.records.size() == 30);
  for (std::size_t e = 0; e < 30; ++e) CHECK(a.history.records[e].train_loss == b.history.records[e].train_loss);
}

TEST_CASE("degenerate cohort: decoder converges to the mean curve") {
  SeededRng rng(5);
  const TruthParams truth = default_truth();
  GrowthDataset data = simulate(20, truth, 0.8, rng);
  for (auto& ind : data.individuals) {
    ind.truth = RandomEffects{};
    ind.y = decode(truth.decoder, data.times, {}).values;
  }
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.seed = 1;
  const AutoencoderResult r = train_autoencoder(data, cfg);
  CHECK(per_individual_mse(r.model, data, Split::train).mean < 1e-2);

  // Loss non-increasing over 100-epoch windows after epoch 200.
  const auto& rec = r.history.records;
  for (std::size_t e = 200; e + 100 < rec.size(); e += 100)
    CHECK(rec[e + 100].train_loss <= rec[e].train_loss + 1e-6);
  for (const auto& x : rec) CHECK(x.train_loss >= x.train_reconstruction);
}

TEST_CASE("penalty warm-up and nonnegativity") {
  SeededRng rng(6);
  GrowthDataset data = simulate(30, default_truth(), 0.8, rng);
  TrainConfig cfg = quick_config();
  cfg.epochs = 80;
  cfg.penalty_warmup = 50;
  const AutoencoderResult r = train_autoencoder(data, cfg);
  for (const auto& x : r.history.records) {
    if (x.epoch < 50)
      CHECK(x.train_loss == x.train_reconstruction);
    else
      CHECK(x.train_loss > x.train_reconstruction);
  }
}

TEST_CASE("a runaway learning rate is reported as divergence") {
  SeededRng rng(7);
  GrowthDataset data = simulate(10, default_truth(), 0.8, rng);
  TrainConfig cfg = quick_config();
  cfg.epochs = 200;
  cfg.learning_rate = 1e6;
  cfg.gradient_clip.reset();
  CHECK_THROWS_AS(train_autoencoder(data, cfg), DivergenceDetected);
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  cfg.epochs = 101;
  cfg.learning_rate = 1e-2;
  CHECK(cfg.step_size(50) == 1e-2);
  cfg.final_learning_rate = 1e-4;
  CHECK(cfg.step_size(0) == doctest::Approx(1e-2));
  CHECK(cfg.step_size(50) == doctest::Approx(1e-3));
  CHECK(cfg.step_size(100) == doctest::Approx(1e-4));
  cfg.learning_rate = -1.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("training needs two individuals in the training split") {
  SeededRng rng(8);
  GrowthDataset data = simulate(2, default_truth(), 0.5, rng);
  CHECK_THROWS_AS(train_autoencoder(data, quick_config()), TooFewIndividuals);
}

TEST_CASE("supervised training") {
  SeededRng rng(9);
  GrowthDataset data = simulate(40, default_truth(), 0.8, rng);

  TrainConfig cfg = quick_config();
  cfg.epochs = 0;
  const SupervisedResult none = train_supervised(data, cfg);
  CHECK(none.history.records.empty());

  GrowthDataset no_truth = data;
  for (auto& ind : no_truth.individuals) ind.truth.reset();
  CHECK_THROWS_AS(train_supervised(no_truth, cfg), MissingGroundTruth);

  // Cohort generated with zero effects: only measurement noise is left in y.
  TruthParams flat = flat_truth();
  flat.noise_var = 0.4;
  SeededRng zero_rng(10);
  GrowthDataset zero = simulate(40, flat, 0.8, zero_rng);
  for (auto& ind : zero.individuals) ind.truth = RandomEffects{};
  cfg.epochs = 1500;
  cfg.learning_rate = 2e-2;
  cfg.penalty_on = false;
  const SupervisedResult r = train_supervised(zero, cfg);
  CHECK(r.history.records.back().train_loss < 1e-3);
}

TEST_CASE("supervised encoder recovers effects on a 500-individual cohort") {
  SeededRng rng(1);
  GrowthDataset data = simulate(500, default_truth(), 0.8, rng);
  TrainConfig cfg;
  cfg.epochs = 3000;
  cfg.learning_rate = 1e-2;
  cfg.final_learning_rate = 1e-4;
  cfg.batch_size = 8;
  cfg.penalty_on = false;
  cfg.seed = 3;
  const SupervisedResult r = train_supervised(data, cfg);
  std::vector<RandomEffects> predicted;
  std::vector<RandomEffects> truth;
  for (std::size_t i : data.indices(Split::validation)) {
    predicted.push_back(encode(r.encoder, r.standardizer, data.individuals[i].y));
    truth.push_back(*data.individuals[i].truth);
  }
  const EffectCorrelation c = correlate_effects(predicted, truth);
  for (double v : c.r) CHECK(v > 0.9);
}
