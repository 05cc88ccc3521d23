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

#include <random>
#include <vector>

#include "gtest/gtest.h"

#include "diarkit/diarize.h"
#include "oracles.h"

namespace diarkit {
namespace {

EmbeddingSequence Sequence(const std::vector<std::vector<double>> &x) {
  EmbeddingSequence seq;
  seq.dim = static_cast<int>(x[0].size());
  for (size_t t = 0; t < x.size(); ++t) seq.frames.push_back({{0.25 * t, 1.5}, x[t]});
  return seq;
}

void ExpectWindows(const std::vector<Segment> &got,
                   std::initializer_list<std::pair<double, double>> want) {
  ASSERT_EQ(got.size(), want.size());
  size_t i = 0;
  for (auto [b, e] : want) {
    EXPECT_NEAR(got[i].onset, b, 1e-12);
    EXPECT_NEAR(got[i].end(), e, 1e-12);
    ++i;
  }
}

TEST(MakeWindows, Examples) {
  WindowingConfig cfg;
  ExpectWindows(MakeWindows(MakeTimeline({{0, 2.0}}), cfg),
                {{0, 1.5}, {0.25, 1.75}, {0.5, 2}, {0.75, 2}, {1, 2}, {1.25, 2}, {1.5, 2}, {1.75, 2}});
  ExpectWindows(MakeWindows(MakeTimeline({{0, 1.0}}), cfg), {{0, 1.0}});
  EXPECT_TRUE(MakeWindows(Timeline{}, cfg).empty());
}

TEST(MakeWindows, RemainderRule) {
  WindowingConfig cfg;
  // 1.6 s: starts 0 ... 1.25 (0.35 left); 1.5 would leave 0.1 < step.
  // 1.5 s: starts 0 ... 1.25, where exactly one step remains.
  auto w = MakeWindows(MakeTimeline({{10, 1.6}, {20, 1.5}}), cfg);
  EXPECT_EQ(w.size(), 12u);
  EXPECT_NEAR(w[5].onset, 11.25, 1e-12);
  EXPECT_NEAR(w[5].end(), 11.6, 1e-12);
  EXPECT_NEAR(w[6].onset, 20.0, 1e-12);
  WindowingConfig bad{1.0, 2.0};
  EXPECT_THROW(MakeWindows(MakeTimeline({{0, 3}}), bad), ConfigError);
}

TEST(ValidateWindows, DetectsMismatch) {
  auto windows = MakeWindows(MakeTimeline({{0, 2.0}}), WindowingConfig{});
  EmbeddingSequence seq;
  seq.dim = 1;
  for (const auto &w : windows) seq.frames.push_back({{QuantizeTime(w.onset), QuantizeTime(w.duration)}, {1.0}});
  EXPECT_NO_THROW(ValidateWindows(windows, seq));
  seq.frames[2].segment.onset += 0.01;
  EXPECT_THROW(ValidateWindows(windows, seq), FormatError);
  seq.frames.pop_back();
  EXPECT_THROW(ValidateWindows(windows, seq), FormatError);
}

TEST(Ahc, Examples) {
  EXPECT_EQ(Ahc(Sequence({{1, 0}, {1, 0}}), {0.9}), (std::vector<int>{0, 0}));
  EXPECT_EQ(Ahc(Sequence({{1, 0}, {0, 1}}), {0.5}), (std::vector<int>{0, 1}));
  EXPECT_EQ(Ahc(Sequence({{0.3, 0.1}}), {0.5}), (std::vector<int>{0}));
  EXPECT_THROW(Ahc(EmbeddingSequence{}, {0.0}), DegenerateInputError);
  EXPECT_THROW(Ahc(Sequence({{1, 0}}), {1.5}), ConfigError);
}

TEST(Ahc, TwoNoisyDirections) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> angle(-15.0 * M_PI / 180.0, 15.0 * M_PI / 180.0);
  std::vector<std::vector<double>> x;
  std::vector<int> truth;
  for (int t = 0; t < 20; ++t) {
    int spk = (t / 3) % 2;
    double a = angle(rng) + (spk ? M_PI / 2 : 0.0);
    x.push_back({std::cos(a), std::sin(a), 0.0});
    truth.push_back(spk);
  }
  auto labels = Ahc(Sequence(x), {0.5});
  EXPECT_EQ(labels, DenseLabels(truth));
  EXPECT_EQ(labels, oracle::AhcExhaustive(x, 0.5));
}

TEST(Ahc, TieBreakMergesLowestPair) {
  // Three mutually orthogonal pairs of identical vectors: all within-pair
  // similarities tie at 1, the pair (0,1) goes first.
  std::vector<std::vector<double>> x{{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(Ahc(Sequence(x), {0.5}), (std::vector<int>{0, 0, 1, 1, 2}));
  EXPECT_EQ(Ahc(Sequence(x), {-1.0}), (std::vector<int>{0, 0, 0, 0, 0}));
}

TEST(Ahc, ThresholdMonotoneAndContiguous) {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int c = 0; c < 20; ++c) {
    std::vector<std::vector<double>> x(30, std::vector<double>(4));
    for (auto &v : x)
      for (auto &e : v) e = n(rng);
    int previous = 1 << 30;
    for (double th = 1.0; th >= -1.0; th -= 0.1) {
      auto labels = Ahc(Sequence(x), {th});
      int count = *std::max_element(labels.begin(), labels.end()) + 1;
      std::vector<bool> seen(count, false);
      for (int l : labels) seen[l] = true;
      EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
      EXPECT_EQ(labels[0], 0);
      EXPECT_LE(count, previous);
      previous = count;
    }
  }
}

TEST(Ahc, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int c = 0; c < 200; ++c) {
    size_t T = 1 + c % 8;
    std::vector<std::vector<double>> x(T, std::vector<double>(3));
    for (auto &v : x)
      for (auto &e : v) e = n(rng);
    double th = -0.8 + 1.6 * (c % 17) / 16.0;
    EXPECT_EQ(Ahc(Sequence(x), {th}), oracle::AhcExhaustive(x, th));
  }
}

TEST(DenseLabels, FirstOccurrence) {
  EXPECT_EQ(DenseLabels({5, 5, 2, 7, 2}), (std::vector<int>{0, 0, 1, 2, 1}));
}

TEST(WindowsToTurns, MidpointBoundaries) {
  Timeline speech = MakeTimeline({{0, 2.0}, {5, 1.0}});
  auto windows = MakeWindows(speech, WindowingConfig{});
  ASSERT_EQ(windows.size(), 9u);
  std::vector<int> labels{0, 0, 0, 1, 1, 1, 1, 1, 2};
  auto d = WindowsToTurns("r", speech, windows, labels);
  ASSERT_EQ(d.turns.size(), 3u);
  // Boundary between windows [0.5,2.0] and [0.75,2.0]: centers 1.25, 1.375.
  EXPECT_EQ(d.turns[0].speaker, "spk00");
  EXPECT_NEAR(d.turns[0].segment.end(), 1.3125, 1e-12);
  EXPECT_EQ(d.turns[1].speaker, "spk01");
  EXPECT_NEAR(d.turns[1].segment.end(), 2.0, 1e-12);
  EXPECT_EQ(d.turns[2].speaker, "spk02");
  EXPECT_NEAR(d.turns[2].segment.onset, 5.0, 1e-12);
  EXPECT_NEAR(d.turns[2].segment.end(), 6.0, 1e-12);
  EXPECT_THROW(WindowsToTurns("r", speech, windows, {0}), ShapeError);
}

TEST(WindowsToTurns, CoversSpeechExactly) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> len(0.3, 6.0), gap(0.1, 2.0);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int c = 0; c < 50; ++c) {
    Timeline speech;
    double t = 0.0;
    for (int i = 0; i < 6; ++i) {
      t += gap(rng);
      double l = len(rng);
      speech.segments.push_back({t, l});
      t += l;
    }
    auto windows = MakeWindows(speech, WindowingConfig{});
    std::vector<int> labels(windows.size());
    for (auto &l : labels) l = lab(rng);
    auto d = WindowsToTurns("r", speech, windows, labels);
    auto covered = SpeechTimeline(d);
    EXPECT_NEAR(TotalDuration(TimelineDifference(speech, covered)), 0.0, 1e-9);
    EXPECT_NEAR(TotalDuration(TimelineDifference(covered, speech)), 0.0, 1e-9);
    // Turns never overlap: one label per instant.
    double total = 0.0;
    for (const auto &turn : d.turns) total += turn.segment.duration;
    EXPECT_NEAR(total, TotalDuration(speech), 1e-9);
  }
}

}  // namespace
}  // namespace diarkit
