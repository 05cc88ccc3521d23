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

// Text file formats: RTTM, embedding archives, posterior streams, trial
// lists, cluster label files, .lab segment files and score files.

#ifndef DIARKIT_IO_H_
#define DIARKIT_IO_H_

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fmt/format.h"

#include "diarkit/core.h"

namespace diarkit {

inline std::string ReadFile(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void WriteFile(const std::filesystem::path &path,
                      std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed for " + path.string());
}

namespace internal {

inline std::vector<std::string_view> SplitFields(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

// Calls fn(line, line_number) for every line that is not blank.
template <typename Fn>
void ForEachLine(std::string_view text, Fn &&fn) {
  int line_number = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_number;
    if (line.find_first_not_of(" \t") != std::string_view::npos)
      fn(line, line_number);
    pos = nl + 1;
  }
}

inline bool ParseDouble(std::string_view s, double *out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline double ParseFiniteOrThrow(std::string_view s, int line,
                                 const char *what) {
  double v;
  if (!ParseDouble(s, &v) || !std::isfinite(v))
    throw ParseError(fmt::format("invalid {} '{}'", what, s), line);
  return v;
}

}  // namespace internal

// ---------------------------------------------------------------------------
// RTTM

inline std::vector<Diarization> ParseRttm(std::string_view text) {
  std::vector<Diarization> out;
  std::map<std::string, size_t, std::less<>> index;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (f.size() < 9) throw ParseError("RTTM line has fewer than 9 fields", n);
    if (f[0] != "SPEAKER")
      throw ParseError(fmt::format("unexpected RTTM type '{}'", f[0]), n);
    Segment seg{internal::ParseFiniteOrThrow(f[3], n, "onset"),
                internal::ParseFiniteOrThrow(f[4], n, "duration")};
    if (!seg.valid()) throw ParseError("negative onset or non-positive duration", n);
    auto it = index.find(f[1]);
    if (it == index.end()) {
      it = index.emplace(std::string(f[1]), out.size()).first;
      out.push_back(Diarization{std::string(f[1]), {}});
    }
    out[it->second].turns.push_back(Turn{seg, std::string(f[7])});
  });
  for (auto &d : out) SortTurns(&d);
  return out;
}

inline std::string EmitRttm(const Diarization &d) {
  std::vector<Turn> turns = d.turns;
  std::stable_sort(turns.begin(), turns.end(), [](const Turn &a, const Turn &b) {
    return std::tie(a.segment.onset, a.speaker) <
           std::tie(b.segment.onset, b.speaker);
  });
  std::string out;
  for (const auto &t : turns)
    out += fmt::format("SPEAKER {} 1 {:.3f} {:.3f} <NA> <NA> {} <NA> <NA>\n",
                       d.recording_id, t.segment.onset, t.segment.duration,
                       t.speaker);
  return out;
}

inline std::string EmitRttm(const std::vector<Diarization> &ds) {
  std::string out;
  for (const auto &d : ds) out += EmitRttm(d);
  return out;
}

// ---------------------------------------------------------------------------
// Embedding archive: "#dim=<D>" header, then "<onset> <duration> <v1..vD>".

inline EmbeddingSequence ParseEmbeddings(std::string_view text,
                                         std::string recording_id = "") {
  EmbeddingSequence seq;
  seq.recording_id = std::move(recording_id);
  bool have_header = false;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    if (!have_header) {
      auto f = internal::SplitFields(line);
      constexpr std::string_view kPrefix = "#dim=";
      if (f.size() != 1 || !f[0].starts_with(kPrefix))
        throw FormatError(fmt::format("line {}: expected '#dim=<D>' header", n));
      double dim;
      if (!internal::ParseDouble(f[0].substr(kPrefix.size()), &dim) ||
          dim < 1 || dim != std::floor(dim))
        throw FormatError(fmt::format("line {}: invalid dimension", n));
      seq.dim = static_cast<int>(dim);
      have_header = true;
      return;
    }
    auto f = internal::SplitFields(line);
    if (f.size() != static_cast<size_t>(seq.dim) + 2)
      throw FormatError(fmt::format(
          "line {}: record has dimension {}, expected {}", n,
          static_cast<long>(f.size()) - 2, seq.dim));
    EmbeddingFrame frame;
    double values[2];
    for (int k = 0; k < 2; ++k)
      if (!internal::ParseDouble(f[k], &values[k]) || !std::isfinite(values[k]))
        throw FormatError(fmt::format("line {}: invalid time field", n));
    frame.segment = Segment{values[0], values[1]};
    if (!frame.segment.valid())
      throw FormatError(fmt::format("line {}: invalid segment", n));
    frame.vector.resize(seq.dim);
    for (int k = 0; k < seq.dim; ++k)
      if (!internal::ParseDouble(f[k + 2], &frame.vector[k]) ||
          !std::isfinite(frame.vector[k]))
        throw FormatError(fmt::format("line {}: non-finite value", n));
    seq.frames.push_back(std::move(frame));
  });
  if (!have_header) throw FormatError("missing '#dim=<D>' header");
  return seq;
}

inline std::string EmitEmbeddings(const EmbeddingSequence &seq) {
  std::string out = fmt::format("#dim={}\n", seq.dim);
  for (const auto &frame : seq.frames) {
    if (static_cast<int>(frame.vector.size()) != seq.dim)
      throw FormatError("embedding vector does not match sequence dimension");
    out += fmt::format("{:.3f} {:.3f}", frame.segment.onset,
                       frame.segment.duration);
    for (double v : frame.vector) {
      if (!std::isfinite(v)) throw FormatError("non-finite embedding value");
      out += fmt::format(" {:.9g}", v);
    }
    out += '\n';
  }
  return out;
}

inline EmbeddingSequence ReadEmbeddings(const std::filesystem::path &path) {
  return ParseEmbeddings(ReadFile(path), path.stem().string());
}

inline void WriteEmbeddings(const EmbeddingSequence &seq,
                            const std::filesystem::path &path) {
  WriteFile(path, EmitEmbeddings(seq));
}

// ---------------------------------------------------------------------------
// Posterior stream: "#step=0.010" header, then one value in [0,1] per line.

inline PosteriorStream ParsePosteriors(std::string_view text,
                                       std::string recording_id = "") {
  PosteriorStream p;
  p.recording_id = std::move(recording_id);
  bool have_header = false;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (!have_header) {
      constexpr std::string_view kPrefix = "#step=";
      double step;
      if (f.size() != 1 || !f[0].starts_with(kPrefix) ||
          !internal::ParseDouble(f[0].substr(kPrefix.size()), &step))
        throw FormatError(fmt::format("line {}: expected '#step=0.010' header", n));
      if (std::abs(step - kPosteriorStep) > 1e-9)
        throw FormatError(fmt::format("line {}: frame step must be 0.010", n));
      have_header = true;
      return;
    }
    double v;
    if (f.size() != 1 || !internal::ParseDouble(f[0], &v) || !(v >= 0.0 && v <= 1.0))
      throw FormatError(fmt::format("line {}: posterior must be a value in [0,1]", n));
    p.values.push_back(v);
  });
  if (!have_header) throw FormatError("missing '#step=0.010' header");
  return p;
}

inline std::string EmitPosteriors(const PosteriorStream &p) {
  std::string out = "#step=0.010\n";
  for (double v : p.values) out += fmt::format("{:.6f}\n", v);
  return out;
}

inline PosteriorStream ReadPosteriors(const std::filesystem::path &path) {
  return ParsePosteriors(ReadFile(path), path.stem().string());
}

// ---------------------------------------------------------------------------
// Trial list: "<enroll_id> <test_id> [<label 0|1>]".

inline std::vector<Trial> ParseTrials(std::string_view text) {
  std::vector<Trial> trials;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (f.size() != 2 && f.size() != 3)
      throw ParseError("trial line needs 2 or 3 fields", n);
    Trial t{std::string(f[0]), std::string(f[1]), std::nullopt, std::nullopt,
            std::nullopt};
    if (f.size() == 3) {
      if (f[2] == "0" || f[2] == "nontarget")
        t.label = 0;
      else if (f[2] == "1" || f[2] == "target")
        t.label = 1;
      else
        throw ParseError(fmt::format("invalid trial label '{}'", f[2]), n);
    }
    trials.push_back(std::move(t));
  });
  return trials;
}

// ---------------------------------------------------------------------------
// Score file: "<enroll_id> <test_id> <score>" with 6 decimals.

struct ScoredPair {
  std::string enroll_id;
  std::string test_id;
  double score = 0.0;
};

inline std::vector<ScoredPair> ParseScores(std::string_view text) {
  std::vector<ScoredPair> out;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (f.size() != 3) throw ParseError("score line needs 3 fields", n);
    out.push_back(ScoredPair{std::string(f[0]), std::string(f[1]),
                             internal::ParseFiniteOrThrow(f[2], n, "score")});
  });
  return out;
}

inline std::string EmitScores(const std::vector<ScoredPair> &scores) {
  std::string out;
  for (const auto &s : scores)
    out += fmt::format("{} {} {:.6f}\n", s.enroll_id, s.test_id, s.score);
  return out;
}

// ---------------------------------------------------------------------------
// Cluster label file: "<onset> <duration> <label>".

struct LabeledWindow {
  Segment segment;
  int label = 0;
};

inline std::vector<LabeledWindow> ParseLabels(std::string_view text) {
  std::vector<LabeledWindow> out;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (f.size() != 3) throw ParseError("label line needs 3 fields", n);
    LabeledWindow w;
    w.segment = Segment{internal::ParseFiniteOrThrow(f[0], n, "onset"),
                        internal::ParseFiniteOrThrow(f[1], n, "duration")};
    auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(),
                                     w.label);
    if (ec != std::errc() || ptr != f[2].data() + f[2].size() || w.label < 0)
      throw ParseError(fmt::format("invalid label '{}'", f[2]), n);
    out.push_back(w);
  });
  return out;
}

inline std::string EmitLabels(const std::vector<LabeledWindow> &windows) {
  std::string out;
  for (const auto &w : windows)
    out += fmt::format("{:.3f} {:.3f} {}\n", w.segment.onset,
                       w.segment.duration, w.label);
  return out;
}

// ---------------------------------------------------------------------------
// .lab segment file: "<onset> <end>".

inline Timeline ParseLab(std::string_view text) {
  Timeline t;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (f.size() < 2) throw ParseError("lab line needs onset and end", n);
    double begin = internal::ParseFiniteOrThrow(f[0], n, "onset");
    double end = internal::ParseFiniteOrThrow(f[1], n, "end");
    if (!(end > begin) || begin < 0) throw ParseError("empty or negative segment", n);
    t.segments.push_back(SegmentFromBounds(begin, end));
  });
  return Normalize(t);
}

inline std::string EmitLab(const Timeline &t) {
  std::string out;
  for (const auto &s : t.segments)
    out += fmt::format("{:.3f} {:.3f}\n", s.onset, s.end());
  return out;
}

// ---------------------------------------------------------------------------
// UEM: "<recording_id> <channel> <onset> <end>".

inline std::map<std::string, Timeline> ParseUem(std::string_view text) {
  std::map<std::string, Timeline> out;
  internal::ForEachLine(text, [&](std::string_view line, int n) {
    auto f = internal::SplitFields(line);
    if (f.size() != 4) throw ParseError("UEM line needs 4 fields", n);
    double begin = internal::ParseFiniteOrThrow(f[2], n, "onset");
    double end = internal::ParseFiniteOrThrow(f[3], n, "end");
    if (!(end > begin) || begin < 0) throw ParseError("empty or negative UEM segment", n);
    out[std::string(f[0])].segments.push_back(SegmentFromBounds(begin, end));
  });
  for (auto &[_, t] : out) t = Normalize(t);
  return out;
}

}  // namespace diarkit

#endif  // DIARKIT_IO_H_
