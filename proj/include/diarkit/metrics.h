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

// Evaluation metrics: equal error rate, minimum detection cost, diarization
// error rate and Jaccard error rate.

#ifndef DIARKIT_METRICS_H_
#define DIARKIT_METRICS_H_

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diarkit/core.h"

namespace diarkit {

struct DetCurvePoint {
  double threshold = 0.0;
  double p_miss = 0.0;
  double p_fa = 0.0;
  int64_t misses = 0;        // targets below threshold
  int64_t false_alarms = 0;  // non-targets at or above threshold
};

// Operating points for every distinct score used as threshold (accept when
// score >= threshold), followed by a reject-all point at +inf.
inline std::vector<DetCurvePoint> DetCurve(std::span<const double> targets,
                                           std::span<const double> nontargets) {
  if (targets.empty() || nontargets.empty())
    throw DegenerateInputError("EER/DCF need both target and non-target scores");
  std::vector<std::pair<double, bool>> all;
  all.reserve(targets.size() + nontargets.size());
  for (double s : targets) all.emplace_back(s, true);
  for (double s : nontargets) all.emplace_back(s, false);
  for (const auto &[s, _] : all)
    if (std::isnan(s)) throw DegenerateInputError("NaN score");
  std::sort(all.begin(), all.end(),
            [](const auto &a, const auto &b) { return a.first < b.first; });

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  std::vector<DetCurvePoint> curve;
  int64_t targets_below = 0, nontargets_below = 0;
  size_t i = 0;
  while (i < all.size()) {
    double threshold = all[i].first;
    int64_t fa = static_cast<int64_t>(nontargets.size()) - nontargets_below;
    curve.push_back({threshold, targets_below / nt, fa / nn, targets_below, fa});
    while (i < all.size() && all[i].first == threshold) {
      (all[i].second ? targets_below : nontargets_below) += 1;
      ++i;
    }
  }
  curve.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0,
                   static_cast<int64_t>(targets.size()), 0});
  return curve;
}

// Point where p_miss == p_fa, linearly interpolated between adjacent
// operating points when the curve has no exact crossing.
inline double Eer(std::span<const double> targets, std::span<const double> nontargets) {
  const auto curve = DetCurve(targets, nontargets);
  const int64_t nt = static_cast<int64_t>(targets.size());
  const int64_t nn = static_cast<int64_t>(nontargets.size());
  // sign(p_miss - p_fa) computed exactly on counts.
  auto sign = [&](const DetCurvePoint &p) {
    int64_t lhs = p.misses * nn, rhs = p.false_alarms * nt;
    return (lhs > rhs) - (lhs < rhs);
  };
  for (size_t k = 0; k < curve.size(); ++k) {
    int sk = sign(curve[k]);
    if (sk == 0) return curve[k].p_miss;
    if (sk > 0) {
      const auto &a = curve[k - 1];  // k > 0: the first point has p_miss = 0
      const auto &b = curve[k];
      double da = a.p_miss - a.p_fa, db = b.p_miss - b.p_fa;
      double lambda = -da / (db - da);
      return a.p_miss + lambda * (b.p_miss - a.p_miss);
    }
  }
  return 1.0;  // unreachable: the last point has p_miss = 1, p_fa = 0
}

inline double MinDcf(std::span<const double> targets, std::span<const double> nontargets,
                     double p_target = 0.05, double c_miss = 1.0, double c_fa = 1.0) {
  if (!(p_target > 0.0 && p_target < 1.0))
    throw ConfigError("p_target must lie in (0, 1)");
  const auto curve = DetCurve(targets, nontargets);
  double best = std::numeric_limits<double>::infinity();
  for (const auto &p : curve)
    best = std::min(best, c_miss * p_target * p.p_miss + c_fa * (1.0 - p_target) * p.p_fa);
  return best / std::min(c_miss * p_target, c_fa * (1.0 - p_target));
}

// ---------------------------------------------------------------------------
// Diarization scoring.

struct DerBreakdown {
  double miss = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double der = 0.0;
  double jer = 0.0;
  double scored_time = 0.0;  // reference speaker time in the scored region
  double collar = 0.0;
  bool scored_overlap = true;
  std::map<std::string, std::string> mapping;  // reference -> hypothesis
};

// Maximum-weight one-to-one assignment of rows to columns (Hungarian
// algorithm on the negated, zero-padded square matrix). Returns, for each
// row, the assigned column or -1.
inline std::vector<int> MaxWeightAssignment(const std::vector<std::vector<double>> &weight) {
  const size_t rows = weight.size();
  const size_t cols = rows ? weight[0].size() : 0;
  const size_t n = std::max(rows, cols);
  if (n == 0) return {};
  auto cost = [&](size_t i, size_t j) {
    return (i < rows && j < cols) ? -weight[i][j] : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials formulation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<size_t> p(n + 1, 0), way(n + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    p[0] = i;
    size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(rows, -1);
  for (size_t j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] - 1 < rows && j - 1 < cols)
      assignment[p[j] - 1] = static_cast<int>(j - 1);
  return assignment;
}

namespace internal {

inline bool Covers(const Timeline &t, double time) {
  auto it = std::upper_bound(t.segments.begin(), t.segments.end(), time,
                             [](double x, const Segment &s) { return x < s.onset; });
  if (it == t.segments.begin()) return false;
  --it;
  return time < it->end();
}

// Evaluation region: the UEM (or [0, last reference end]) minus +-collar
// around every reference turn boundary.
inline Timeline ScoredRegion(const Diarization &ref, double collar,
                             const std::optional<Timeline> &uem) {
  Timeline region;
  if (uem) {
    region = Normalize(*uem);
  } else {
    double end = 0.0;
    for (const auto &t : ref.turns) end = std::max(end, t.segment.end());
    if (end > 0.0) region.segments.push_back(SegmentFromBounds(0.0, end));
  }
  if (collar > 0.0) {
    Timeline guard;
    for (const auto &t : ref.turns) {
      for (double b : {t.segment.onset, t.segment.end()})
        guard.segments.push_back(
            SegmentFromBounds(std::max(0.0, b - collar), b + collar));
    }
    region = TimelineDifference(region, guard);
  }
  return region;
}

}  // namespace internal

// Interval-exact DER and JER. Overlapping reference speech is scored: an
// instant with k reference speakers contributes k units of reference time.
inline DerBreakdown ScoreDiarization(const Diarization &ref_in, const Diarization &hyp_in,
                                     double collar = 0.25,
                                     const std::optional<Timeline> &uem = std::nullopt) {
  if (ref_in.recording_id != hyp_in.recording_id)
    throw UsageError("reference '" + ref_in.recording_id + "' and hypothesis '" +
                     hyp_in.recording_id + "' are different recordings");
  if (!(collar >= 0.0)) throw ConfigError("collar must be non-negative");

  const auto ref_ids = Speakers(ref_in);
  const auto hyp_ids = Speakers(hyp_in);
  std::vector<Timeline> ref_t, hyp_t;
  for (const auto &id : ref_ids) ref_t.push_back(SpeakerTimeline(ref_in, id));
  for (const auto &id : hyp_ids) hyp_t.push_back(SpeakerTimeline(hyp_in, id));
  const Timeline region = internal::ScoredRegion(ref_in, collar, uem);

  std::vector<double> cuts;
  for (const auto &s : region.segments) {
    cuts.push_back(s.onset);
    cuts.push_back(s.end());
  }
  for (const auto *group : {&ref_t, &hyp_t})
    for (const auto &t : *group)
      for (const auto &s : t.segments) {
        cuts.push_back(s.onset);
        cuts.push_back(s.end());
      }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Elementary intervals with constant speaker sets.
  struct Piece {
    double duration;
    std::vector<int> ref, hyp;
  };
  std::vector<Piece> pieces;
  std::vector<std::vector<double>> overlap(ref_ids.size(),
                                           std::vector<double>(hyp_ids.size(), 0.0));
  for (size_t k = 0; k + 1 < cuts.size(); ++k) {
    double d = cuts[k + 1] - cuts[k];
    double mid = 0.5 * (cuts[k] + cuts[k + 1]);
    if (!(d > 0.0) || !internal::Covers(region, mid)) continue;
    Piece piece{d, {}, {}};
    for (size_t r = 0; r < ref_t.size(); ++r)
      if (internal::Covers(ref_t[r], mid)) piece.ref.push_back(static_cast<int>(r));
    for (size_t h = 0; h < hyp_t.size(); ++h)
      if (internal::Covers(hyp_t[h], mid)) piece.hyp.push_back(static_cast<int>(h));
    if (piece.ref.empty() && piece.hyp.empty()) continue;
    for (int r : piece.ref)
      for (int h : piece.hyp) overlap[r][h] += d;
    pieces.push_back(std::move(piece));
  }

  std::vector<int> map = MaxWeightAssignment(overlap);
  for (size_t r = 0; r < map.size(); ++r)
    if (map[r] >= 0 && !(overlap[r][map[r]] > 0.0)) map[r] = -1;
  DerBreakdown out;
  out.collar = collar;
  double miss = 0.0, fa = 0.0, conf = 0.0, total = 0.0;
  for (const auto &p : pieces) {
    const double nref = static_cast<double>(p.ref.size());
    const double nhyp = static_cast<double>(p.hyp.size());
    double correct = 0.0;
    for (int r : p.ref)
      if (map[r] >= 0 && std::find(p.hyp.begin(), p.hyp.end(), map[r]) != p.hyp.end())
        correct += 1.0;
    total += p.duration * nref;
    miss += p.duration * std::max(0.0, nref - nhyp);
    fa += p.duration * std::max(0.0, nhyp - nref);
    conf += p.duration * (std::min(nref, nhyp) - correct);
  }
  if (!(total > 0.0))
    throw DegenerateInputError("no reference speech in the scored region of '" +
                               ref_in.recording_id + "'");
  out.scored_time = total;
  out.miss = miss / total;
  out.false_alarm = fa / total;
  out.confusion = conf / total;
  out.der = out.miss + out.false_alarm + out.confusion;

  // JER over reference speakers that have scored time.
  double jer_sum = 0.0;
  int jer_count = 0;
  for (size_t r = 0; r < ref_ids.size(); ++r) {
    Timeline ref_r = TimelineIntersection(ref_t[r], region);
    double ref_dur = TotalDuration(ref_r);
    if (!(ref_dur > 0.0)) continue;
    ++jer_count;
    if (map[r] < 0) {
      jer_sum += 1.0;
      continue;
    }
    out.mapping[ref_ids[r]] = hyp_ids[map[r]];
    Timeline hyp_h = TimelineIntersection(hyp_t[map[r]], region);
    double inter = TotalDuration(TimelineIntersection(ref_r, hyp_h));
    double uni = TotalDuration(TimelineUnion(ref_r, hyp_h));
    jer_sum += 1.0 - inter / uni;
  }
  out.jer = jer_count ? jer_sum / jer_count : 0.0;
  return out;
}

inline DerBreakdown Der(const Diarization &ref, const Diarization &hyp, double collar = 0.25,
                        const std::optional<Timeline> &uem = std::nullopt) {
  return ScoreDiarization(ref, hyp, collar, uem);
}

inline double Jer(const Diarization &ref, const Diarization &hyp, double collar = 0.25,
                  const std::optional<Timeline> &uem = std::nullopt) {
  return ScoreDiarization(ref, hyp, collar, uem).jer;
}

}  // namespace diarkit

#endif  // DIARKIT_METRICS_H_
