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

// Overlapped-speech handling: each detected overlap segment gets the two
// speakers closest to it in time.

#ifndef DIARKIT_OVERLAP_H_
#define DIARKIT_OVERLAP_H_

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "fmt/format.h"

#include "diarkit/core.h"

namespace diarkit {

struct OverlapAssignment {
  Segment segment;
  std::vector<std::string> speakers;  // two distinct ids unless degenerate
};

struct OverlapResult {
  std::vector<OverlapAssignment> assignments;
  std::vector<std::string> diagnostics;
};

// Gap between two closed intervals; zero when they touch or intersect.
inline double IntervalGap(const Segment &a, const Segment &b) {
  return std::max(0.0, std::max(b.onset - a.end(), a.onset - b.end()));
}

// Distance from `segment` to a speaker is zero if one of the speaker's turns
// meets it, else the smallest gap to any turn. Ties prefer the speaker with
// more total speech, then the smaller id.
inline OverlapResult AssignOverlaps(const Timeline &overlaps, const Diarization &diar) {
  OverlapResult out;
  const auto ids = Speakers(diar);
  if (ids.empty()) {
    out.diagnostics.push_back(
        fmt::format("recording '{}': no speakers; overlaps left unassigned",
                    diar.recording_id));
    return out;
  }
  std::vector<Timeline> speaker_turns;
  std::vector<double> speaking;
  for (const auto &id : ids) {
    speaker_turns.push_back(SpeakerTimeline(diar, id));
    speaking.push_back(TotalDuration(speaker_turns.back()));
  }

  struct Candidate {
    double distance;
    double speaking;
    const std::string *id;
  };
  for (const auto &o : overlaps.segments) {
    std::vector<Candidate> cands;
    for (size_t k = 0; k < ids.size(); ++k) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto &s : speaker_turns[k].segments) d = std::min(d, IntervalGap(o, s));
      cands.push_back({d, speaking[k], &ids[k]});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate &a, const Candidate &b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      if (a.speaking != b.speaking) return a.speaking > b.speaking;
      return *a.id < *b.id;
    });
    OverlapAssignment a{o, {}};
    for (size_t k = 0; k < std::min<size_t>(2, cands.size()); ++k)
      a.speakers.push_back(*cands[k].id);
    if (a.speakers.size() < 2)
      out.diagnostics.push_back(fmt::format(
          "recording '{}': overlap at {:.3f}s has only one available speaker",
          diar.recording_id, o.onset));
    out.assignments.push_back(std::move(a));
  }
  return out;
}

// Adds a turn for every assigned speaker over its overlap segment, then
// merges same-speaker turns.
inline Diarization MergeOverlaps(const Diarization &diar,
                                 const std::vector<OverlapAssignment> &assignments) {
  if (assignments.empty()) return diar;
  Diarization out = diar;
  for (const auto &a : assignments)
    for (const auto &spk : a.speakers) out.turns.push_back(Turn{a.segment, spk});
  return NormalizeDiarization(out);
}

}  // namespace diarkit

#endif  // DIARKIT_OVERLAP_H_
