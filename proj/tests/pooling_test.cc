// Copyright (c) 2026 The diarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <numeric>
#include <random>
#include <vector>

#include "gtest/gtest.h"

#include "diarkit/pooling.h"

namespace diarkit {
namespace {

FrameMatrix FromRows(const std::vector<std::vector<double>> &rows) {
  FrameMatrix x(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t c = 0; c < rows.size(); ++c)
    for (size_t t = 0; t < rows[c].size(); ++t) x(c, t) = rows[c][t];
  return x;
}

FrameMatrix Random(std::mt19937_64 &rng, int C, int T) {
  std::normal_distribution<double> n(0.0, 1.0);
  FrameMatrix x(C, T);
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t) x(c, t) = n(rng);
  return x;
}

PoolingConfig RandomConfig(std::mt19937_64 &rng, int C, int H, bool with_stats) {
  std::normal_distribution<double> n(0.0, 1.0);
  PoolingConfig cfg{H, 1e-8, ZeroAttention(C, H, with_stats)};
  for (auto &head : cfg.attention) {
    for (auto &w : head.weight) w = n(rng);
    head.bias = n(rng);
  }
  return cfg;
}

TEST(StatsPool, HandExample) {
  auto out = StatsPool(FromRows({{1.0, 3.0}}));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
}

TEST(StatsPool, ConstantAndSingleFrame) {
  auto out = StatsPool(FromRows({{0.5, 0.5, 0.5}, {-2.0, -2.0, -2.0}}));
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], -2.0);
  EXPECT_DOUBLE_EQ(out[2], std::sqrt(1e-8));
  EXPECT_DOUBLE_EQ(out[3], std::sqrt(1e-8));
  auto single = StatsPool(FromRows({{4.0}, {5.0}}));
  EXPECT_EQ(single, (std::vector<double>{4.0, 5.0, std::sqrt(1e-8), std::sqrt(1e-8)}));
}

TEST(StatsPool, EmptyInput) {
  EXPECT_THROW(StatsPool(FrameMatrix(2, 0)), DegenerateInputError);
}

TEST(ChannelShuffle, Examples) {
  auto x = FromRows({{1}, {2}, {3}, {4}});
  auto y = ChannelShuffle(x, 2);
  EXPECT_EQ(y(0, 0), 1);
  EXPECT_EQ(y(1, 0), 3);
  EXPECT_EQ(y(2, 0), 2);
  EXPECT_EQ(y(3, 0), 4);
  for (int g : {1, 4}) {
    auto z = ChannelShuffle(x, g);
    for (int c = 0; c < 4; ++c) EXPECT_EQ(z(c, 0), x(c, 0));
  }
  EXPECT_THROW(ChannelShuffle(x, 3), ShapeError);
}

TEST(ChannelShuffle, SwappedFactorsInvert) {
  std::mt19937_64 rng(1);
  for (auto [C, g] : std::vector<std::pair<int, int>>{{6, 2}, {12, 3}, {16, 4}, {8, 8}}) {
    auto x = Random(rng, C, 3);
    auto back = ChannelShuffle(ChannelShuffle(x, g), C / g);
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < 3; ++t) EXPECT_EQ(back(c, t), x(c, t));
  }
}

TEST(MhaPool, ZeroParamsEqualStats) {
  std::mt19937_64 rng(2);
  auto x = Random(rng, 8, 11);
  PoolingConfig cfg{4, 1e-8, ZeroAttention(8, 4, false)};
  auto a = MhaPool(x, cfg, false), b = StatsPool(x);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(MhaPool, SingleFrameIgnoresParams) {
  std::mt19937_64 rng(3);
  auto x = Random(rng, 4, 1);
  auto out = MhaPool(x, RandomConfig(rng, 4, 2, false), false);
  for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out[c], x(c, 0));
}

TEST(MhaPool, WeightsAreADistribution) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    auto x = Random(rng, 6, 1 + i % 17);
    for (bool stats : {false, true}) {
      auto cfg = RandomConfig(rng, 6, 3, stats);
      for (int h = 0; h < 3; ++h) {
        auto w = HeadAttentionWeights(x, h, cfg, stats);
        for (double v : w) EXPECT_GE(v, 0.0);
        EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
      }
    }
  }
}

TEST(MhaPool, ShapeErrors) {
  FrameMatrix x(6, 3);
  PoolingConfig cfg{4, 1e-8, ZeroAttention(8, 4, false)};
  EXPECT_THROW(MhaPool(x, cfg, false), ShapeError);
  PoolingConfig wrong{3, 1e-8, ZeroAttention(6, 3, true)};
  EXPECT_THROW(MhaPool(x, wrong, false), ShapeError);
}

TEST(SmhasPool, Dimensions) {
  std::mt19937_64 rng(5);
  auto x = Random(rng, 4, 7);
  EXPECT_EQ(SmhasPool(x, RandomConfig(rng, 8, 2, true)).size(), 16u);
  EXPECT_EQ(SmhaPool(x, RandomConfig(rng, 8, 2, false), false).size(), 16u);
}

TEST(SmhasPool, ConstantInput) {
  std::mt19937_64 rng(6);
  FrameMatrix x(4, 5);
  for (int c = 0; c < 4; ++c)
    for (int t = 0; t < 5; ++t) x(c, t) = c + 1.0;
  auto out = SmhasPool(x, RandomConfig(rng, 8, 2, true));
  // Means: the input followed by its shuffle (1,3,2,4); stds floored.
  std::vector<double> means{1, 2, 3, 4, 1, 3, 2, 4};
  for (int c = 0; c < 8; ++c) {
    EXPECT_NEAR(out[c], means[c], 1e-12);
    EXPECT_DOUBLE_EQ(out[8 + c], std::sqrt(1e-8));
  }
}

TEST(SmhasPool, FramePermutationInvariant) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 30; ++i) {
    int T = 2 + i;
    auto x = Random(rng, 8, T);
    std::vector<int> perm(T);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FrameMatrix xp(8, T);
    for (int c = 0; c < 8; ++c)
      for (int t = 0; t < T; ++t) xp(c, t) = x(c, perm[t]);
    auto cfg = RandomConfig(rng, 16, 4, true);
    auto a = SmhasPool(x, cfg), b = SmhasPool(xp, cfg);
    for (size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-9);
  }
}

}  // namespace
}  // namespace diarkit
