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

// Domain types shared by every stage: segments, timelines, diarizations,
// embedding sequences and posterior streams, plus the timeline algebra.

#ifndef DIARKIT_CORE_H_
#define DIARKIT_CORE_H_

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "diarkit/error.h"

namespace diarkit {

// Times are seconds; everything written to disk is quantized to this step.
inline constexpr double kTimeQuantum = 1e-3;
// Segments shorter than one quantum are dropped by normalization. The slack
// keeps segments that are exactly 1 ms up to floating-point noise.
inline constexpr double kMinSegmentDuration = kTimeQuantum - 1e-9;
inline constexpr double kPosteriorStep = 0.01;

inline double QuantizeTime(double t) {
  return std::round(t / kTimeQuantum) * kTimeQuantum;
}

struct Segment {
  double onset = 0.0;
  double duration = 0.0;

  double end() const { return onset + duration; }
  bool valid() const {
    return std::isfinite(onset) && std::isfinite(duration) && onset >= 0.0 &&
           duration > 0.0;
  }
  friend bool operator==(const Segment &, const Segment &) = default;
};

inline Segment SegmentFromBounds(double begin, double end) {
  return Segment{begin, end - begin};
}

// Ordered list of segments. `labels` is either empty (unlabeled timeline) or
// parallel to `segments`.
struct Timeline {
  std::vector<Segment> segments;
  std::vector<std::string> labels;

  bool labeled() const { return !labels.empty(); }
  bool empty() const { return segments.empty(); }
  size_t size() const { return segments.size(); }
};

struct Turn {
  Segment segment;
  std::string speaker;
  friend bool operator==(const Turn &, const Turn &) = default;
};

struct Diarization {
  std::string recording_id;
  std::vector<Turn> turns;
};

struct EmbeddingFrame {
  Segment segment;
  std::vector<double> vector;
};

struct EmbeddingSequence {
  std::string recording_id;
  int dim = 0;
  std::vector<EmbeddingFrame> frames;

  size_t size() const { return frames.size(); }
};

// One enroll/test pair. Scores are filled in as the trial moves through the
// scoring chain.
struct Trial {
  std::string enroll_id;
  std::string test_id;
  std::optional<int> label;
  std::optional<double> raw_score;
  std::optional<double> calibrated_score;
};

struct PosteriorStream {
  std::string recording_id;
  double frame_step = kPosteriorStep;
  std::vector<double> values;
};

// ---------------------------------------------------------------------------
// Vector helpers.

inline double Dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("dot product of vectors with different dimensions");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double L2Norm(std::span<const double> a) { return std::sqrt(Dot(a, a)); }

inline std::vector<double> L2Normalized(std::span<const double> a) {
  double norm = L2Norm(a);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DegenerateInputError("cannot normalize a zero or non-finite vector");
  std::vector<double> out(a.begin(), a.end());
  for (auto &v : out) v /= norm;
  return out;
}

// Returns a copy with every vector scaled to unit L2 norm.
inline EmbeddingSequence NormalizeEmbeddings(const EmbeddingSequence &seq) {
  EmbeddingSequence out = seq;
  for (auto &frame : out.frames) frame.vector = L2Normalized(frame.vector);
  return out;
}

// ---------------------------------------------------------------------------
// Timeline algebra.

inline double TotalDuration(const Timeline &t) {
  double total = 0.0;
  for (const auto &s : t.segments) total += s.duration;
  return total;
}

inline Timeline MakeTimeline(std::vector<Segment> segments) {
  Timeline t;
  t.segments = std::move(segments);
  return t;
}

// Sorts by onset, then duration, then label.
inline void SortTimeline(Timeline *t) {
  std::vector<size_t> order(t->segments.size());
  std::iota(order.begin(), order.end(), 0);
  const bool labeled = t->labeled();
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    const auto &a = t->segments[i];
    const auto &b = t->segments[j];
    if (a.onset != b.onset) return a.onset < b.onset;
    if (a.duration != b.duration) return a.duration < b.duration;
    return labeled && t->labels[i] < t->labels[j];
  });
  Timeline sorted;
  for (size_t i : order) {
    sorted.segments.push_back(t->segments[i]);
    if (labeled) sorted.labels.push_back(t->labels[i]);
  }
  *t = std::move(sorted);
}

// Merges overlapping or touching segments and drops sub-millisecond pieces.
// Labels are discarded.
inline Timeline Normalize(const Timeline &t) {
  std::vector<Segment> segs;
  for (const auto &s : t.segments)
    if (s.duration > 0.0) segs.push_back(s);
  std::sort(segs.begin(), segs.end(), [](const Segment &a, const Segment &b) {
    return a.onset < b.onset || (a.onset == b.onset && a.duration < b.duration);
  });
  Timeline out;
  for (const auto &s : segs) {
    if (!out.segments.empty() && s.onset <= out.segments.back().end()) {
      auto &last = out.segments.back();
      double end = std::max(last.end(), s.end());
      last.duration = end - last.onset;
    } else {
      out.segments.push_back(s);
    }
  }
  std::erase_if(out.segments, [](const Segment &s) {
    return s.duration < kMinSegmentDuration;
  });
  return out;
}

inline Timeline TimelineUnion(const Timeline &a, const Timeline &b) {
  Timeline all;
  all.segments = a.segments;
  all.segments.insert(all.segments.end(), b.segments.begin(), b.segments.end());
  return Normalize(all);
}

inline Timeline TimelineIntersection(const Timeline &a, const Timeline &b) {
  Timeline na = Normalize(a), nb = Normalize(b);
  Timeline out;
  size_t i = 0, j = 0;
  while (i < na.size() && j < nb.size()) {
    const auto &x = na.segments[i];
    const auto &y = nb.segments[j];
    double begin = std::max(x.onset, y.onset);
    double end = std::min(x.end(), y.end());
    if (end > begin) out.segments.push_back(SegmentFromBounds(begin, end));
    if (x.end() < y.end())
      ++i;
    else
      ++j;
  }
  return Normalize(out);
}

// Time covered by `a` but not by `b`.
inline Timeline TimelineDifference(const Timeline &a, const Timeline &b) {
  Timeline na = Normalize(a), nb = Normalize(b);
  Timeline out;
  size_t j = 0;
  for (const auto &x : na.segments) {
    double cursor = x.onset;
    while (j < nb.size() && nb.segments[j].end() <= cursor) ++j;
    size_t k = j;
    while (k < nb.size() && nb.segments[k].onset < x.end()) {
      const auto &y = nb.segments[k];
      if (y.onset > cursor)
        out.segments.push_back(SegmentFromBounds(cursor, y.onset));
      cursor = std::max(cursor, y.end());
      ++k;
    }
    if (cursor < x.end())
      out.segments.push_back(SegmentFromBounds(cursor, x.end()));
  }
  return Normalize(out);
}

// ---------------------------------------------------------------------------
// Diarization helpers.

inline void SortTurns(Diarization *d) {
  std::stable_sort(d->turns.begin(), d->turns.end(),
                   [](const Turn &a, const Turn &b) {
                     return std::tie(a.segment.onset, a.segment.duration,
                                     a.speaker) <
                            std::tie(b.segment.onset, b.segment.duration,
                                     b.speaker);
                   });
}

inline std::vector<std::string> Speakers(const Diarization &d) {
  std::set<std::string> ids;
  for (const auto &t : d.turns) ids.insert(t.speaker);
  return {ids.begin(), ids.end()};
}

inline Timeline SpeakerTimeline(const Diarization &d,
                                const std::string &speaker) {
  Timeline t;
  for (const auto &turn : d.turns)
    if (turn.speaker == speaker) t.segments.push_back(turn.segment);
  return Normalize(t);
}

// Per-speaker normalization: same-speaker turns are merged; different
// speakers may still overlap.
inline Diarization NormalizeDiarization(const Diarization &d) {
  Diarization out;
  out.recording_id = d.recording_id;
  for (const auto &spk : Speakers(d))
    for (const auto &s : SpeakerTimeline(d, spk).segments)
      out.turns.push_back(Turn{s, spk});
  SortTurns(&out);
  return out;
}

// Union of every speaker's turns.
inline Timeline SpeechTimeline(const Diarization &d) {
  Timeline t;
  for (const auto &turn : d.turns) t.segments.push_back(turn.segment);
  return Normalize(t);
}

}  // namespace diarkit

#endif  // DIARKIT_CORE_H_
