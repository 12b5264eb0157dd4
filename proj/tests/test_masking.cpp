#include "support/structured_oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cosparse;
using namespace cosparse::testing;

namespace {

ScoreSet random_scores(const std::vector<Index>& sizes, std::mt19937_64& rng) {
  ScoreSet s;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    Tensorf t({sizes[l]});
    for (Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
    s.names.push_back("layer" + std::to_string(l) + ".weight");
    s.scores.push_back(DiffTensor<float>::parameter(t));
  }
  return s;
}

ModelState cnn_s(std::uint64_t seed = 0) { return build_model(reference_spec("cnn-s", 1, 32, 4), seed); }

}  // namespace

TEST(KeepCount, FloorOfTheKeptFraction) {
  EXPECT_EQ(keep_count(0.0, 10), 10);
  // (1 - 0.9) * 10 is 0.999... in binary; the guard still keeps one unit.
  EXPECT_EQ(keep_count(0.9, 10), 1);
  EXPECT_EQ(keep_count(0.95, 10), 0);
  EXPECT_EQ(keep_count(0.8926, 10000), 1074);
  EXPECT_THROW(keep_count(1.0, 10), std::invalid_argument);
  EXPECT_THROW(keep_count(-0.1, 10), std::invalid_argument);
}

TEST(Threshold, KeepsExactlyTheLargestMagnitudes) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto scores = random_scores({7, 13, 5}, rng);
    const double s = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
    const auto mask = threshold(scores, s);
    const Index n = 25;
    EXPECT_EQ(mask.kept(), static_cast<Index>(std::floor((1.0 - s) * n + 1e-9)));
    // Oracle: every kept |score| >= every dropped |score|.
    float min_kept = INFINITY, max_dropped = -INFINITY;
    for (std::size_t l = 0; l < mask.masks.size(); ++l) {
      for (Index i = 0; i < mask.masks[l].size(); ++i) {
        const float a = std::abs(scores.scores[l].value()[i]);
        if (mask.masks[l][i] != 0.0f) min_kept = std::min(min_kept, a);
        else max_dropped = std::max(max_dropped, a);
      }
    }
    if (mask.kept() > 0 && mask.kept() < n) EXPECT_GE(min_kept, max_dropped);
  }
}

TEST(Threshold, TiesGoToTheLowerLayerAndIndex) {
  ScoreSet s;
  s.names = {"a.weight", "b.weight"};
  s.scores = {DiffTensor<float>::parameter(Tensorf({3}, {1.0f, 1.0f, 0.5f})),
              DiffTensor<float>::parameter(Tensorf({2}, {-1.0f, 1.0f}))};
  const auto mask = threshold(s, 0.4);  // keep 3 of 5
  EXPECT_EQ(mask.masks[0].values(), (Tensorf({3}, {1, 1, 0}).values()));
  EXPECT_EQ(mask.masks[1].values(), (Tensorf({2}, {1, 0}).values()));
}

TEST(Threshold, PerLayerScopeKeepsTheFractionInEachLayer) {
  std::mt19937_64 rng(5);
  const auto scores = random_scores({10, 20, 40}, rng);
  const auto mask = threshold(scores, 0.75, ThresholdScope::per_layer);
  const Index expected[] = {2, 5, 10};
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(mask.masks[l].values().sum(), expected[l]);
  }
}

TEST(Threshold, NonFiniteScoresAreDroppedFirst) {
  ScoreSet s;
  s.names = {"a.weight"};
  s.scores = {DiffTensor<float>::parameter(Tensorf({4}, {NAN, 0.1f, 2.0f, 0.3f}))};
  const auto mask = threshold(s, 0.5);
  EXPECT_EQ(mask.masks[0].values(), (Tensorf({4}, {0, 0, 1, 1}).values()));
}

TEST(ScaledInit, PreservesTheMagnitudeRankingWithUnitMaximum) {
  const auto model = cnn_s();
  const auto scores = scaled_init(model, Granularity::element);
  float mx = 0.0f;
  for (const auto& t : scores.scores) mx = std::max(mx, t.value().values().cwiseAbs().maxCoeff());
  EXPECT_FLOAT_EQ(mx, 1.0f);
  // The initial mask equals the magnitude mask.
  std::vector<Tensorf> mags;
  for (const auto& name : model.prunable) mags.push_back(Tensorf(model.param(name).value().shape(), model.param(name).value().values().cwiseAbs()));
  const auto by_magnitude = threshold_keys(model.prunable, mags, Granularity::element, 0.8, ThresholdScope::global);
  EXPECT_EQ(mask_digest(threshold(scores, 0.8)), mask_digest(by_magnitude));
}

TEST(ScaledInit, ChannelScoresAreRowNorms) {
  const auto model = cnn_s();
  const auto scores = scaled_init(model, Granularity::channel);
  const auto& w = model.param("conv2.weight").value();
  const auto& c = scores.at("conv2.weight").value();
  ASSERT_EQ(c.shape(), (Shape{16}));
  const auto rows = w.matrix(16, w.size() / 16);
  for (Index o = 1; o < 16; ++o) {
    EXPECT_NEAR(c[o] / c[0], rows.row(o).norm() / rows.row(0).norm(), 1e-5);
  }
}

TEST(MaskedWeights, ChannelMaskSilencesWeightsAndBias) {
  auto model = cnn_s();
  for (auto& p : model.params) {
    if (p.name.ends_with(".bias")) p.tensor.mutable_value().values().setConstant(0.5f);
  }
  auto mask = identity_mask(model, Granularity::channel);
  mask.masks[0][3] = 0.0f;
  Tape<float> tape;
  const auto w = masked_weights<float>(tape, model.spec, model.weights<float>(), mask.names, mask.masks,
                                       Granularity::channel);
  const auto& cw = w.at("conv1.weight").value();
  const Index per = cw.size() / 8;
  for (Index i = 0; i < per; ++i) EXPECT_EQ(cw[3 * per + i], 0.0f);
  EXPECT_EQ(w.at("conv1.bias").value()[3], 0.0f);
  EXPECT_EQ(w.at("conv1.bias").value()[2], 0.5f);
}

TEST(CheckMask, RejectsMismatchedLayouts) {
  const auto model = cnn_s();
  auto mask = identity_mask(model, Granularity::element);
  EXPECT_NO_THROW(check_mask(model, mask));
  mask.masks[1] = Tensorf({3});
  EXPECT_THROW(check_mask(model, mask), std::invalid_argument);
}

TEST(StructuredAccounting, MatchesBruteForceEnumerationOnToyNets) {
  std::mt19937_64 rng(11);
  const std::vector<ModelSpec> specs = {
      reference_spec("cnn-s", 1, 12, 3), reference_spec("mlp-s", 2, 6, 3), reference_spec("cnn-m", 2, 10, 5),
      ModelSpec{"pooled", 1, 9,
                {{LayerKind::conv, "c1", 4, 3, 1, 1, false},
                 {LayerKind::maxpool, "p", 0, 2, 2, 0, false},
                 {LayerKind::conv, "c2", 5, 2, 1, 0, false},
                 {LayerKind::linear, "fc", 6, 0, 1, 0, false},
                 {LayerKind::linear, "head", 2, 0, 1, 0, true}}}};
  for (const auto& spec : specs) {
    const auto model = build_model(spec, 1);
    const auto dense = enumerate_channel_costs(model, nullptr);
    EXPECT_EQ(flops_count(model), dense.flops) << spec.name;
    EXPECT_EQ(dense_flops(spec), dense.flops) << spec.name;
    EXPECT_EQ(param_count(model, false), dense.total_params) << spec.name;
    EXPECT_DOUBLE_EQ(speedup_ratio(model, identity_mask(model, Granularity::channel)), 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      const auto mask = random_channel_mask(model, 0.6, rng);
      const auto oracle = enumerate_channel_costs(model, &mask);
      EXPECT_EQ(flops_count(model, &mask), oracle.flops) << spec.name;
      EXPECT_EQ(pruned_param_count(mask, model), oracle.pruned_params) << spec.name;
      EXPECT_DOUBLE_EQ(memory_reduction(mask, model),
                       static_cast<double>(oracle.pruned_params) / static_cast<double>(oracle.total_params));
    }
  }
}

TEST(StructuredAccounting, ElementMasksCountZeroedWeights) {
  const auto model = cnn_s();
  auto mask = identity_mask(model, Granularity::element);
  mask.masks[0][0] = mask.masks[0][1] = mask.masks[2][5] = 0.0f;
  EXPECT_EQ(pruned_param_count(mask, model), 3);
  EXPECT_DOUBLE_EQ(memory_reduction(mask, model), 3.0 / static_cast<double>(param_count(model, false)));
  EXPECT_THROW(flops_count(model, &mask), std::invalid_argument);
}

TEST(MaskDigest, SensitiveToEveryBit) {
  const auto model = cnn_s();
  auto a = identity_mask(model, Granularity::element);
  auto b = a;
  EXPECT_EQ(mask_digest(a), mask_digest(b));
  b.masks[2][17] = 0.0f;
  EXPECT_NE(mask_digest(a), mask_digest(b));
  EXPECT_NEAR(sparsity_of(b), 1.0 / static_cast<double>(b.total()), 1e-15);
}
