#include "support/micro_net.hpp"

#include <gtest/gtest.h>

using namespace cosparse;
using namespace cosparse::testing;

TEST(GradCheck, EveryOpMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& r : op_suite(seed)) {
      EXPECT_LE(r.error, 1e-6) << r.name << " seed " << seed;
      EXPECT_GT(r.checked, 0) << r.name << " seed " << seed;
    }
  }
}

TEST(GradCheck, PromptedMaskedMicroNets) {
  Index checked = 0, skipped = 0;
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    auto net = random_micro_net(seed);
    for (const auto& r : net.check()) {
      EXPECT_LE(r.error, 1e-5) << r.name << " seed " << seed;
      checked += r.checked;
      skipped += r.skipped;
    }
  }
  // Kinks are rare: nearly every coordinate gets compared.
  EXPECT_GT(checked, 50 * (skipped + 1));
}

TEST(GradCheck, DetectsAWrongGradient) {
  Tensord x({3}, {0.5, -1.0, 2.0});
  auto eval = [&] { return Evaluation{x[0] * x[0] + x[1] * x[2], 0}; };
  const Tensord right({3}, {1.0, 2.0, -1.0});
  const Tensord wrong({3}, {1.0, 2.0, 1.0});
  EXPECT_LT(fd_check("right", x, right, eval, 0).error, 1e-8);
  EXPECT_GT(fd_check("wrong", x, wrong, eval, 0).error, 0.5);
}

TEST(GradCheck, StraightThroughScoreGradientIsThetaTimesUpstream) {
  // w = theta * m, L = sum(w * r): dL/dscore = r * theta whatever m holds.
  Tape<double> tape;
  auto theta = DiffTensor<double>::constant(Tensord({4}, {1.0, -2.0, 3.0, 0.5}));
  auto score = DiffTensor<double>::parameter(Tensord({4}, {0.1, 0.2, 0.3, 0.4}));
  const Tensord mask({4}, {1.0, 0.0, 1.0, 0.0});
  auto r = DiffTensor<double>::constant(Tensord({4}, {2.0, 1.0, -1.0, 4.0}));
  auto loss = ops::sum(tape, ops::mul(tape, ops::mask_weight(tape, theta, mask, score), r));
  EXPECT_DOUBLE_EQ(loss.value()[0], 2.0 - 3.0);
  backward(tape, loss);
  const double expected[] = {2.0, -2.0, -3.0, 2.0};
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(score.grad()[i], expected[i]);
}
