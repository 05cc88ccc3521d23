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

// Fusion of frame-level speech (or overlap) posterior streams and
// conversion of the fused stream to segments.

#ifndef DIARKIT_VADFUSE_H_
#define DIARKIT_VADFUSE_H_

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "diarkit/core.h"

namespace diarkit {

struct FusionConfig {
  double threshold = 0.5;
  double min_segment = 0.10;  // seconds
  double min_gap = 0.10;      // seconds
  std::vector<double> weights;  // empty means equal weights

  void Validate() const {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw ConfigError("fusion threshold must lie in (0, 1)");
    if (!(min_segment >= 0.0) || !(min_gap >= 0.0))
      throw ConfigError("min_segment and min_gap must be non-negative");
    for (double w : weights)
      if (!(w >= 0.0)) throw ConfigError("fusion weights must be non-negative");
  }
};

// Streams whose lengths differ by more than this are rejected.
inline constexpr size_t kMaxStreamLengthSlack = 2;

// Frame-wise weighted mean; weights are normalized to sum to one and an
// empty weight vector means equal weights. Longer streams are truncated to
// the shortest.
inline PosteriorStream FusePosteriors(const std::vector<PosteriorStream> &streams,
                                      std::span<const double> weights = {}) {
  if (streams.empty()) throw ConfigError("no posterior streams to fuse");
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(streams.size(), 1.0);
  if (w.size() != streams.size())
    throw ConfigError("one fusion weight per stream is required");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ConfigError("fusion weights must be non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw ConfigError("fusion weights are all zero");

  size_t shortest = streams[0].values.size(), longest = shortest;
  for (const auto &s : streams) {
    if (std::abs(s.frame_step - streams[0].frame_step) > 1e-12)
      throw FormatError("posterior streams have different frame steps");
    shortest = std::min(shortest, s.values.size());
    longest = std::max(longest, s.values.size());
  }
  if (longest - shortest > kMaxStreamLengthSlack)
    throw FormatError("posterior stream lengths differ by more than 2 frames");

  PosteriorStream out;
  out.recording_id = streams[0].recording_id;
  out.frame_step = streams[0].frame_step;
  out.values.assign(shortest, 0.0);
  for (size_t k = 0; k < streams.size(); ++k) {
    double wk = w[k] / total;
    for (size_t t = 0; t < shortest; ++t) out.values[t] += wk * streams[k].values[t];
  }
  for (auto &v : out.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// Thresholds (>=), bridges gaps shorter than min_gap, then drops segments
// shorter than min_segment. Frame t covers [t*step, (t+1)*step).
inline Timeline PosteriorToSegments(const PosteriorStream &p,
                                    const FusionConfig &cfg) {
  constexpr double kSlack = 1e-9;
  const double step = p.frame_step;
  struct Run {
    size_t begin, end;  // frames, half-open
  };
  std::vector<Run> runs;
  for (size_t t = 0; t < p.values.size(); ++t) {
    if (p.values[t] < cfg.threshold) continue;
    if (!runs.empty() && runs.back().end == t)
      runs.back().end = t + 1;
    else
      runs.push_back({t, t + 1});
  }

  std::vector<Run> bridged;
  for (const auto &r : runs) {
    if (!bridged.empty() &&
        (r.begin - bridged.back().end) * step < cfg.min_gap - kSlack)
      bridged.back().end = r.end;
    else
      bridged.push_back(r);
  }

  Timeline out;
  for (const auto &r : bridged) {
    double duration = (r.end - r.begin) * step;
    if (duration < cfg.min_segment - kSlack) continue;
    out.segments.push_back(SegmentFromBounds(r.begin * step, r.end * step));
  }
  return out;
}

struct VadScores {
  double false_alarm = 0.0;
  double miss = 0.0;
  double accuracy = 0.0;
};

// Fractions of the total scored time.
inline VadScores VadMetrics(const Timeline &hyp, const Timeline &ref,
                            const Timeline &total) {
  double denom = TotalDuration(Normalize(total));
  if (!(denom > 0.0)) throw DegenerateInputError("total scored duration is zero");
  Timeline hyp_in = TimelineIntersection(hyp, total);
  Timeline ref_in = TimelineIntersection(ref, total);
  VadScores s;
  s.false_alarm = TotalDuration(TimelineDifference(hyp_in, ref_in)) / denom;
  s.miss = TotalDuration(TimelineDifference(ref_in, hyp_in)) / denom;
  s.accuracy = 1.0 - s.false_alarm - s.miss;
  return s;
}

}  // namespace diarkit

#endif  // DIARKIT_VADFUSE_H_
