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

// Sliding-window segmentation of speech and agglomerative clustering of the
// window embeddings.

#ifndef DIARKIT_DIARIZE_H_
#define DIARKIT_DIARIZE_H_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fmt/format.h"

#include "diarkit/core.h"

namespace diarkit {

struct WindowingConfig {
  double window = 1.5;  // seconds
  double step = 0.25;   // seconds

  void Validate() const {
    if (!(step > 0.0) || !(step <= window))
      throw ConfigError("windowing requires 0 < step <= window");
  }
};

struct AhcConfig {
  double threshold = 0.0;  // stop merging below this average cosine

  void Validate() const {
    if (!(threshold >= -1.0 && threshold <= 1.0))
      throw ConfigError("AHC threshold must lie in [-1, 1]");
  }
};

namespace internal {
inline constexpr double kWindowSlack = 1e-9;
}

// Windows for one speech segment. A segment shorter than the window gives a
// single window; otherwise windows start every `step` and are clipped at the
// segment end, and a start is used while at least `step` of speech remains.
inline std::vector<Segment> MakeSegmentWindows(const Segment &speech,
                                               const WindowingConfig &cfg) {
  std::vector<Segment> out;
  const double end = speech.end();
  if (speech.duration < cfg.window - internal::kWindowSlack) {
    out.push_back(speech);
    return out;
  }
  for (long k = 0;; ++k) {
    double onset = speech.onset + k * cfg.step;
    double remaining = end - onset;
    if (k > 0 && remaining < cfg.step - internal::kWindowSlack) break;
    out.push_back(Segment{onset, std::min(cfg.window, remaining)});
  }
  return out;
}

inline std::vector<Segment> MakeWindows(const Timeline &speech,
                                        const WindowingConfig &cfg) {
  cfg.Validate();
  std::vector<Segment> out;
  for (const auto &s : speech.segments) {
    auto w = MakeSegmentWindows(s, cfg);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

// Checks an archive's window timestamps against the expected windows at the
// 1 ms file precision.
inline void ValidateWindows(const std::vector<Segment> &expected,
                            const EmbeddingSequence &seq) {
  constexpr double kTolerance = kTimeQuantum + 1e-9;
  if (expected.size() != seq.frames.size())
    throw FormatError(fmt::format(
        "embedding archive '{}' has {} windows, speech timeline implies {}",
        seq.recording_id, seq.frames.size(), expected.size()));
  for (size_t i = 0; i < expected.size(); ++i) {
    const auto &a = expected[i];
    const auto &b = seq.frames[i].segment;
    if (std::abs(a.onset - b.onset) > kTolerance ||
        std::abs(a.duration - b.duration) > kTolerance)
      throw FormatError(fmt::format(
          "embedding archive '{}' window {} is [{:.3f}, +{:.3f}], expected "
          "[{:.3f}, +{:.3f}]",
          seq.recording_id, i, b.onset, b.duration, a.onset, a.duration));
  }
}

// Relabels so that labels are 0..S-1 in order of first occurrence.
inline std::vector<int> DenseLabels(const std::vector<int> &labels) {
  std::vector<int> out(labels.size());
  std::map<int, int> mapping;
  for (size_t t = 0; t < labels.size(); ++t) {
    auto it = mapping.find(labels[t]);
    if (it == mapping.end())
      it = mapping.emplace(labels[t], static_cast<int>(mapping.size())).first;
    out[t] = it->second;
  }
  return out;
}

// Average-linkage agglomerative clustering on cosine similarity. Clusters
// keep the position of their lower-index parent; the merged-away cluster is
// removed and later clusters shift down. Among tied pairs the
// lexicographically smallest (i, j) position pair is merged first.
inline std::vector<int> Ahc(const EmbeddingSequence &seq, const AhcConfig &cfg) {
  cfg.Validate();
  const size_t T = seq.frames.size();
  if (T == 0) throw DegenerateInputError("cannot cluster an empty sequence");

  std::vector<std::vector<double>> unit;
  unit.reserve(T);
  for (const auto &f : seq.frames) unit.push_back(L2Normalized(f.vector));

  // sim is indexed by original slot ids; `active` lists the live slots in
  // cluster-position order.
  std::vector<std::vector<double>> sim(T, std::vector<double>(T, 0.0));
  for (size_t a = 0; a < T; ++a)
    for (size_t b = a + 1; b < T; ++b) sim[a][b] = sim[b][a] = Dot(unit[a], unit[b]);

  std::vector<size_t> active(T), size(T, 1), owner(T);
  for (size_t t = 0; t < T; ++t) active[t] = owner[t] = t;

  while (active.size() > 1) {
    size_t best_i = 0, best_j = 1;
    double best = sim[active[0]][active[1]];
    for (size_t i = 0; i < active.size(); ++i)
      for (size_t j = i + 1; j < active.size(); ++j) {
        double s = sim[active[i]][active[j]];
        if (s > best) {
          best = s;
          best_i = i;
          best_j = j;
        }
      }
    if (best < cfg.threshold) break;

    const size_t a = active[best_i], b = active[best_j];
    const double na = static_cast<double>(size[a]), nb = static_cast<double>(size[b]);
    for (size_t c : active) {
      if (c == a || c == b) continue;
      double merged = (na * sim[a][c] + nb * sim[b][c]) / (na + nb);
      sim[a][c] = sim[c][a] = merged;
    }
    size[a] += size[b];
    for (auto &o : owner)
      if (o == b) o = a;
    active.erase(active.begin() + static_cast<long>(best_j));
  }

  std::vector<int> labels(T);
  for (size_t t = 0; t < T; ++t) labels[t] = static_cast<int>(owner[t]);
  return DenseLabels(labels);
}

inline std::string SpeakerName(int label) { return fmt::format("spk{:02d}", label); }

// Builds speaker turns from labeled windows. Within each speech segment a
// label change between consecutive windows puts the turn boundary at the
// midpoint of the two window centers; turns are clipped to the segment.
inline Diarization WindowsToTurns(const std::string &recording_id,
                                  const Timeline &speech,
                                  const std::vector<Segment> &windows,
                                  const std::vector<int> &labels) {
  if (windows.size() != labels.size())
    throw ShapeError("one label per window is required");
  Diarization d;
  d.recording_id = recording_id;
  size_t w = 0;
  for (const auto &seg : speech.segments) {
    const double seg_end = seg.end();
    size_t first = w;
    while (w < windows.size() &&
           windows[w].onset < seg_end - internal::kWindowSlack &&
           windows[w].onset >= seg.onset - internal::kWindowSlack)
      ++w;
    if (w == first) continue;
    double turn_start = seg.onset;
    for (size_t k = first; k < w; ++k) {
      bool last = k + 1 == w;
      if (!last && labels[k + 1] == labels[k]) continue;
      double turn_end = seg_end;
      if (!last) {
        double c0 = windows[k].onset + 0.5 * windows[k].duration;
        double c1 = windows[k + 1].onset + 0.5 * windows[k + 1].duration;
        turn_end = std::clamp(0.5 * (c0 + c1), seg.onset, seg_end);
      }
      if (turn_end > turn_start)
        d.turns.push_back(Turn{SegmentFromBounds(turn_start, turn_end),
                               SpeakerName(labels[k])});
      turn_start = turn_end;
    }
  }
  SortTurns(&d);
  return d;
}

}  // namespace diarkit

#endif  // DIARKIT_DIARIZE_H_
