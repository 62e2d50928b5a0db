#include <gtest/gtest.h>

#include <random>

#include "attrstream/error.hpp"
#include "attrstream/estimator.hpp"
#include "support.hpp"

using namespace attrstream;
using testing_support::random_vector;

namespace {

SpanFeatureMatrix random_features(std::mt19937_64& rng, std::size_t k, std::uint32_t l,
                                  std::uint32_t h) {
  SpanFeatureMatrix f;
  f.num_layers = l;
  f.num_heads = h;
  f.num_regions = k;
  f.span = {0, 1, ""};
  std::uniform_real_distribution<double> u(0.0, 0.2);
  f.values.resize(k * l * h);
  for (auto& x : f.values) x = u(rng);
  return f;
}

// Targets exactly linear in the ablated-feature sums, plus optional noise.
TrainingSet linear_set(std::mt19937_64& rng, const std::vector<double>& w, std::size_t samples,
                       double noise) {
  TrainingSet set;
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t s = 0; s < samples; ++s) {
    TrainingSample ts;
    ts.features = random_features(rng, 6 + rng() % 6, 2, 3);
    ts.masks = sample_masks(ts.features.num_regions, 32, rng());
    for (const auto& m : ts.masks) {
      auto x = combine_binary(ts.features, m.ablated());
      double y = 0;
      for (std::size_t j = 0; j < w.size(); ++j) y += w[j] * x[j];
      ts.targets.push_back(y + noise * n(rng));
    }
    set.samples.push_back(std::move(ts));
  }
  return set;
}

}  // namespace

TEST(Pearson, BasicsAndErrors) {
  std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8.5};
  EXPECT_NEAR(pearson(x, y), testing_support::naive_pearson(x, y), 1e-14);
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-15);
  std::vector<double> c{3, 3, 3, 3};
  try {
    pearson(x, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
  try {
    pearson(x, std::vector<double>{1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Pearson, MatchesLongDoubleReference) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    auto x = random_vector(rng, 2 + rng() % 50);
    auto y = random_vector(rng, x.size());
    EXPECT_NEAR(pearson(x, y), testing_support::naive_pearson(x, y), 1e-12);
  }
}

TEST(AffineFit, OptimumAndResidual) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    auto z = random_vector(rng, 40, 3.0);
    auto y = random_vector(rng, 40);
    for (std::size_t i = 0; i < 40; ++i) y[i] += 0.5 * z[i];
    auto fit = standardized_affine_fit(z, y);
    double rho = pearson(z, y);
    EXPECT_NEAR(fit.mse, 1 - rho * rho, 1e-10);
    EXPECT_NEAR(standardized_affine_mse(z, y, fit.alpha, fit.beta), fit.mse, 1e-10);
    // Any perturbation is worse.
    for (double da : {-1e-3, 1e-3})
      EXPECT_GT(standardized_affine_mse(z, y, fit.alpha + da, fit.beta), fit.mse);
    for (double db : {-1e-3, 1e-3})
      EXPECT_GT(standardized_affine_mse(z, y, fit.alpha, fit.beta + db), fit.mse);
  }
}

TEST(Prediction, SumOfAblatedScores) {
  std::mt19937_64 rng(3);
  auto f = random_features(rng, 7, 2, 2);
  EstimatorWeights w{2, 2, random_vector(rng, 4), "", 0};
  auto scores = score_regions(w, f);
  for (int m = 0; m < 128; ++m) {
    MaskSample mask;
    for (int k = 0; k < 7; ++k) mask.retained.push_back((m >> k) & 1);
    double expect = 0;
    for (int k = 0; k < 7; ++k)
      if (!mask.retained[k]) expect += scores[k];
    EXPECT_NEAR(predict_mask_effect(w, f, mask), expect, 1e-12);
  }
  EXPECT_EQ(predict_mask_effect(w, f, MaskSample::retain_all(7)), 0.0);
  EstimatorWeights bad{1, 2, {1, 1}, "", 0};
  EXPECT_THROW(score_regions(bad, f), Error);
}

TEST(Prediction, ZeroRowScoresZero) {
  std::mt19937_64 rng(4);
  auto f = random_features(rng, 5, 2, 3);
  for (std::size_t j = 0; j < f.dim(); ++j) f.values[2 * f.dim() + j] = 0.0;
  auto s = score_regions(random_vector(rng, 6), f);
  EXPECT_EQ(s[2], 0.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto set = linear_set(rng, random_vector(rng, 6), 4, 0.5);
    std::vector<PreparedSample> prepared;
    for (const auto& s : set.samples) prepared.push_back(prepare_sample(s));
    std::vector<const PreparedSample*> batch;
    for (const auto& p : prepared) batch.push_back(&p);
    auto w = random_vector(rng, 6);
    auto lg = pearson_loss_and_gradient(w, batch);
    EXPECT_EQ(lg.used, 4u);
    for (std::size_t j = 0; j < 6; ++j) {
      const double h = 1e-6;
      auto wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      double fd = (pearson_loss_and_gradient(wp, batch).loss -
                   pearson_loss_and_gradient(wm, batch).loss) / (2 * h);
      EXPECT_NEAR(lg.gradient[j], fd, 1e-6 + 1e-4 * std::abs(fd));
    }
    // Scale invariance: the gradient is orthogonal to w.
    double dot = 0;
    for (std::size_t j = 0; j < 6; ++j) dot += lg.gradient[j] * w[j];
    EXPECT_NEAR(dot, 0.0, 1e-10);
  }
}

TEST(Loss, ConstantTargetsAreSkipped) {
  std::mt19937_64 rng(6);
  auto set = linear_set(rng, random_vector(rng, 6), 2, 0.0);
  std::fill(set.samples[1].targets.begin(), set.samples[1].targets.end(), 1.0);
  std::vector<PreparedSample> prepared;
  for (const auto& s : set.samples) prepared.push_back(prepare_sample(s));
  std::vector<const PreparedSample*> batch{&prepared[0], &prepared[1]};
  auto lg = pearson_loss_and_gradient(random_vector(rng, 6), batch);
  EXPECT_EQ(lg.used, 1u);
}

TEST(Train, RecoversLinearDirection) {
  std::mt19937_64 rng(7);
  auto truth = random_vector(rng, 6);
  auto set = linear_set(rng, truth, 300, 0.0);
  TrainConfig cfg;
  cfg.iterations = 1500;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 64;
  auto res = train(set, cfg);
  EXPECT_GT(cosine_similarity(res.weights.w, truth), 0.99);
  EXPECT_EQ(res.loss_history.size(), 1500u);
  EXPECT_LT(res.loss_history.back(), -0.99);
  EXPECT_EQ(res.weights.num_layers, 2u);
  EXPECT_EQ(res.weights.config_hash, cfg.hash());
  auto again = train(set, cfg);
  EXPECT_EQ(again.weights.w, res.weights.w);
}

TEST(Train, CorrectOnlyFilter) {
  std::mt19937_64 rng(8);
  auto set = linear_set(rng, random_vector(rng, 6), 4, 0.0);
  for (auto& s : set.samples) s.correct = false;
  TrainConfig cfg;
  cfg.iterations = 5;
  try {
    train(set, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
  cfg.correct_only = false;
  EXPECT_EQ(train(set, cfg).loss_history.size(), 5u);
}

TEST(Train, ConfigValidationAndHash) {
  TrainConfig a;
  EXPECT_NO_THROW(a.validate());
  TrainConfig b = a;
  b.learning_rate = 2e-3;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash(), TrainConfig{}.hash());
  for (auto mutate : std::vector<void (*)(TrainConfig&)>{
           [](TrainConfig& c) { c.learning_rate = 0; },
           [](TrainConfig& c) { c.batch_size = 0; },
           [](TrainConfig& c) { c.iterations = 0; },
           [](TrainConfig& c) { c.masks_per_sample = 1; },
           [](TrainConfig& c) { c.beta1 = 1.0; }}) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), Error);
  }
}

TEST(Masks, BernoulliHalfAndDeterministic) {
  auto m = sample_masks(16, 2000, 3);
  double kept = 0;
  for (const auto& x : m) kept += 16 - x.ablated_count();
  EXPECT_NEAR(kept / (16 * 2000), 0.5, 0.01);
  EXPECT_EQ(sample_masks(16, 10, 3), sample_masks(16, 10, 3));
  EXPECT_NE(sample_masks(16, 10, 3), sample_masks(16, 10, 4));
}

TEST(Baselines, AttentionIsHeadMeanOfPooledFeatures) {
  std::mt19937_64 rng(9);
  auto t = testing_support::random_trace(rng, 2, 3, 8, {3, 4}, 2, 2);
  auto p = testing_support::random_partition(rng, t.grid, 5);
  auto a = attention_baseline(t, t.spans[1], p);
  auto f = pool_span_region(t, t.spans[1], p);
  for (std::size_t k = 0; k < 5; ++k) {
    double mean = 0;
    for (std::size_t j = 0; j < 6; ++j) mean += f.at(k, j) / 6;
    EXPECT_NEAR(a[k], mean, 1e-14);
  }
  auto r = random_baseline(9, 5);
  EXPECT_EQ(r, random_baseline(9, 5));
  for (double x : r) {
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(Cosine, Basics) {
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}),
              1 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 1}), Error);
}
