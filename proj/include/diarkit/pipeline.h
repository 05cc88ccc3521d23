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

// Pipeline orchestration: JSON run configs, the diarization chain
// (VAD fusion -> windows -> AHC -> VB -> turns -> overlap -> RTTM), the
// verification chain (cosine -> AS-Norm -> QMF calibration -> fusion ->
// metrics) and run manifests.

#ifndef DIARKIT_PIPELINE_H_
#define DIARKIT_PIPELINE_H_

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "fmt/format.h"
#include "json.hpp"

#include "diarkit/core.h"
#include "diarkit/diarize.h"
#include "diarkit/io.h"
#include "diarkit/metrics.h"
#include "diarkit/overlap.h"
#include "diarkit/vadfuse.h"
#include "diarkit/vbhmm.h"
#include "diarkit/verification.h"

namespace diarkit {

inline constexpr const char *kVersion = "0.1.0";

namespace fs = std::filesystem;
using json = nlohmann::json;

// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitFailures = 1, kExitConfig = 2 };

// ---------------------------------------------------------------------------
// Hashing for manifests.

inline std::string Sha256Hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

inline std::string FileSha256(const fs::path &path) { return Sha256Hex(ReadFile(path)); }

// ---------------------------------------------------------------------------
// JSON helpers. Unknown keys are rejected everywhere.

namespace internal {

inline void CheckKeys(const json &j, std::initializer_list<const char *> allowed,
                      const std::string &context) {
  if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
  for (const auto &[key, _] : j.items()) {
    bool ok = false;
    for (const char *a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(fmt::format("unknown key '{}' in {}", key, context));
  }
}

template <typename T>
void Read(const json &j, const char *key, T *out, const std::string &context) {
  if (!j.contains(key)) return;
  try {
    *out = j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ConfigError(fmt::format("invalid value for '{}' in {}", key, context));
  }
}

inline fs::path Resolve(const fs::path &base, const std::string &p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline FusionConfig ParseFusion(const json &j, const std::string &ctx) {
  CheckKeys(j, {"threshold", "min_segment", "min_gap", "weights"}, ctx);
  FusionConfig c;
  Read(j, "threshold", &c.threshold, ctx);
  Read(j, "min_segment", &c.min_segment, ctx);
  Read(j, "min_gap", &c.min_gap, ctx);
  Read(j, "weights", &c.weights, ctx);
  c.Validate();
  return c;
}

inline json FusionToJson(const FusionConfig &c) {
  return {{"threshold", c.threshold},
          {"min_segment", c.min_segment},
          {"min_gap", c.min_gap},
          {"weights", c.weights}};
}

inline json ParseJsonFile(const fs::path &path) {
  std::string text;
  try {
    text = ReadFile(path);
  } catch (const Error &e) {
    throw ConfigError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception &e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void ParallelFor(size_t n, int workers, Fn &&fn) {
  size_t threads = std::min<size_t>(n, static_cast<size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (size_t k = 0; k < threads; ++k)
    pool.emplace_back([&] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = n;
      }
    });
  for (auto &t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

class StageTimer {
 public:
  void Lap(const char *stage) {
    auto now = std::chrono::steady_clock::now();
    timings_[stage] = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
  }
  const json &timings() const { return timings_; }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  json timings_ = json::object();
};

}  // namespace internal

// ---------------------------------------------------------------------------
// Diarization pipeline.

struct RecordingInputs {
  std::string id;
  std::vector<fs::path> vad;   // posterior streams to fuse
  std::optional<fs::path> speech;  // .lab alternative to `vad`
  std::vector<fs::path> osd;   // overlap posterior streams (optional)
  fs::path embeddings;
  std::optional<fs::path> reference;  // RTTM for scoring (optional)
};

struct PipelineConfig {
  fs::path output_dir;
  uint64_t seed = 0;
  int workers = 1;
  FusionConfig vad;
  FusionConfig osd;
  WindowingConfig windowing;
  AhcConfig ahc;
  bool vb_enabled = true;
  VbConfig vb;
  std::optional<fs::path> vb_cohort;
  double collar = 0.25;
  std::vector<RecordingInputs> recordings;
  json source;  // the config document as given, for the manifest
};

inline PipelineConfig ParsePipelineConfig(const json &j, const fs::path &base_dir) {
  using internal::CheckKeys;
  using internal::Read;
  CheckKeys(j, {"output_dir", "seed", "workers", "vad", "osd", "windowing", "ahc", "vb",
                "scoring", "recordings"},
            "diarization config");
  PipelineConfig c;
  c.source = j;
  std::string out_dir;
  Read(j, "output_dir", &out_dir, "diarization config");
  if (out_dir.empty()) throw ConfigError("diarization config needs 'output_dir'");
  c.output_dir = internal::Resolve(base_dir, out_dir);
  Read(j, "seed", &c.seed, "diarization config");
  Read(j, "workers", &c.workers, "diarization config");
  if (c.workers < 1) throw ConfigError("workers must be positive");
  if (j.contains("vad")) c.vad = internal::ParseFusion(j["vad"], "vad");
  if (j.contains("osd")) c.osd = internal::ParseFusion(j["osd"], "osd");
  if (j.contains("windowing")) {
    CheckKeys(j["windowing"], {"window", "step"}, "windowing");
    Read(j["windowing"], "window", &c.windowing.window, "windowing");
    Read(j["windowing"], "step", &c.windowing.step, "windowing");
  }
  c.windowing.Validate();
  if (j.contains("ahc")) {
    CheckKeys(j["ahc"], {"threshold"}, "ahc");
    Read(j["ahc"], "threshold", &c.ahc.threshold, "ahc");
  }
  c.ahc.Validate();
  if (j.contains("vb")) {
    const auto &v = j["vb"];
    CheckKeys(v, {"enabled", "fa", "fb", "fc", "loop_prob", "max_iters", "elbo_tol",
                  "min_occupancy", "asnorm", "mu_sigma_literal", "cohort", "top_k"},
              "vb");
    Read(v, "enabled", &c.vb_enabled, "vb");
    Read(v, "fa", &c.vb.fa, "vb");
    Read(v, "fb", &c.vb.fb, "vb");
    Read(v, "fc", &c.vb.fc, "vb");
    Read(v, "loop_prob", &c.vb.loop_prob, "vb");
    Read(v, "max_iters", &c.vb.max_iters, "vb");
    Read(v, "elbo_tol", &c.vb.elbo_tol, "vb");
    Read(v, "min_occupancy", &c.vb.min_occupancy, "vb");
    Read(v, "asnorm", &c.vb.asnorm, "vb");
    Read(v, "mu_sigma_literal", &c.vb.mu_sigma_literal, "vb");
    Read(v, "top_k", &c.vb.cohort_top_k, "vb");
    if (v.contains("cohort")) {
      std::string p;
      Read(v, "cohort", &p, "vb");
      c.vb_cohort = internal::Resolve(base_dir, p);
    }
  }
  if (c.vb_enabled && c.vb.asnorm && !c.vb.mu_sigma_literal) {
    if (!c.vb_cohort) throw ConfigError("vb.asnorm needs vb.cohort");
    try {
      c.vb.cohort = std::make_shared<const Cohort>(
          CohortFromEmbeddings(ReadEmbeddings(*c.vb_cohort)));
    } catch (const Error &e) {
      throw ConfigError(std::string("cannot load VB cohort: ") + e.what());
    }
  }
  if (c.vb_enabled) c.vb.Validate();
  if (j.contains("scoring")) {
    CheckKeys(j["scoring"], {"collar"}, "scoring");
    Read(j["scoring"], "collar", &c.collar, "scoring");
    if (!(c.collar >= 0.0)) throw ConfigError("collar must be non-negative");
  }

  if (!j.contains("recordings") || !j["recordings"].is_array() || j["recordings"].empty())
    throw ConfigError("diarization config needs a non-empty 'recordings' array");
  std::set<std::string> seen;
  for (const auto &r : j["recordings"]) {
    CheckKeys(r, {"id", "vad", "speech", "osd", "embeddings", "reference"}, "recording");
    RecordingInputs rec;
    Read(r, "id", &rec.id, "recording");
    if (rec.id.empty()) throw ConfigError("recording needs an 'id'");
    if (!seen.insert(rec.id).second)
      throw ConfigError("duplicate recording id '" + rec.id + "'");
    std::vector<std::string> paths;
    Read(r, "vad", &paths, "recording");
    for (const auto &p : paths) rec.vad.push_back(internal::Resolve(base_dir, p));
    paths.clear();
    Read(r, "osd", &paths, "recording");
    for (const auto &p : paths) rec.osd.push_back(internal::Resolve(base_dir, p));
    std::string p;
    Read(r, "speech", &p, "recording");
    if (!p.empty()) rec.speech = internal::Resolve(base_dir, p);
    if (rec.vad.empty() == !rec.speech.has_value())
      throw ConfigError("recording '" + rec.id + "' needs exactly one of 'vad' or 'speech'");
    p.clear();
    Read(r, "embeddings", &p, "recording");
    if (p.empty()) throw ConfigError("recording '" + rec.id + "' needs 'embeddings'");
    rec.embeddings = internal::Resolve(base_dir, p);
    p.clear();
    Read(r, "reference", &p, "recording");
    if (!p.empty()) rec.reference = internal::Resolve(base_dir, p);
    c.recordings.push_back(std::move(rec));
  }
  return c;
}

inline PipelineConfig LoadPipelineConfig(const fs::path &path) {
  return ParsePipelineConfig(internal::ParseJsonFile(path), path.parent_path());
}

struct RecordingOutput {
  std::string id;
  bool ok = false;
  std::string error;
  Diarization hypothesis;
  Timeline speech;
  std::vector<LabeledWindow> ahc_labels;
  std::vector<LabeledWindow> vb_labels;
  json report;
};

inline Timeline SpeechFromStreams(const std::vector<fs::path> &paths,
                                  const FusionConfig &cfg) {
  std::vector<PosteriorStream> streams;
  for (const auto &p : paths) streams.push_back(ReadPosteriors(p));
  return PosteriorToSegments(FusePosteriors(streams, cfg.weights), cfg);
}

// Runs the whole chain for one recording. Errors are captured, not thrown.
inline RecordingOutput ProcessRecording(const PipelineConfig &cfg,
                                        const RecordingInputs &rec) {
  RecordingOutput out;
  out.id = rec.id;
  internal::StageTimer timer;
  json report = {{"id", rec.id}};
  try {
    out.speech = rec.speech ? ParseLab(ReadFile(*rec.speech))
                            : SpeechFromStreams(rec.vad, cfg.vad);
    timer.Lap("vad");
    report["speech_seconds"] = TotalDuration(out.speech);

    EmbeddingSequence seq = ReadEmbeddings(rec.embeddings);
    seq.recording_id = rec.id;
    const auto windows = MakeWindows(out.speech, cfg.windowing);
    ValidateWindows(windows, seq);
    report["windows"] = windows.size();
    timer.Lap("windows");

    std::vector<int> labels;
    if (!windows.empty()) labels = Ahc(seq, cfg.ahc);
    for (size_t i = 0; i < windows.size(); ++i)
      out.ahc_labels.push_back({windows[i], labels[i]});
    int ahc_speakers = 0;
    for (int l : labels) ahc_speakers = std::max(ahc_speakers, l + 1);
    report["speakers_ahc"] = ahc_speakers;
    timer.Lap("ahc");

    if (cfg.vb_enabled && !windows.empty()) {
      VbResult vb = VbResegment(labels, seq, cfg.vb);
      labels = vb.labels;
      json elbo = json::array();
      for (const auto &it : vb.iterations) elbo.push_back(it.elbo);
      report["vb"] = {{"iterations", vb.iterations.size()},
                      {"converged", vb.converged},
                      {"prior_updates_rejected", vb.prior_updates_rejected},
                      {"elbo", elbo},
                      {"speakers", vb.final_speakers},
                      {"diagnostics", vb.diagnostics}};
      for (size_t i = 0; i < windows.size(); ++i)
        out.vb_labels.push_back({windows[i], labels[i]});
    }
    timer.Lap("vb");

    out.hypothesis = WindowsToTurns(rec.id, out.speech, windows, labels);
    if (!rec.osd.empty()) {
      Timeline overlaps = SpeechFromStreams(rec.osd, cfg.osd);
      auto assigned = AssignOverlaps(overlaps, out.hypothesis);
      out.hypothesis = MergeOverlaps(out.hypothesis, assigned.assignments);
      report["overlap_segments"] = assigned.assignments.size();
      if (!assigned.diagnostics.empty()) report["overlap_diagnostics"] = assigned.diagnostics;
    }
    timer.Lap("overlap");
    report["speakers"] = Speakers(out.hypothesis).size();

    if (rec.reference) {
      auto refs = ParseRttm(ReadFile(*rec.reference));
      auto it = std::find_if(refs.begin(), refs.end(),
                             [&](const Diarization &d) { return d.recording_id == rec.id; });
      if (it == refs.end())
        throw FormatError("reference RTTM has no turns for '" + rec.id + "'");
      auto score = ScoreDiarization(*it, out.hypothesis, cfg.collar);
      report["der"] = score.der;
      report["jer"] = score.jer;
    }
    timer.Lap("scoring");
    out.ok = true;
    report["status"] = "ok";
  } catch (const std::exception &e) {
    out.ok = false;
    out.error = e.what();
    report["status"] = "error";
    report["error"] = out.error;
  }
  report["timings_ms"] = timer.timings();
  out.report = std::move(report);
  return out;
}

struct RunSummary {
  json summary;
  json manifest;
  int failures = 0;
  std::vector<RecordingOutput> recordings;
};

inline json MakeManifest(const json &config, const std::vector<fs::path> &inputs,
                         const std::vector<fs::path> &outputs) {
  json in = json::object(), outj = json::object();
  for (const auto &p : inputs) {
    std::error_code ec;
    in[p.string()] = fs::exists(p, ec) ? FileSha256(p) : std::string("missing");
  }
  for (const auto &p : outputs) outj[p.filename().string()] = FileSha256(p);
  return {{"tool", "diarkit"},
          {"version", kVersion},
          {"config_sha256", Sha256Hex(config.dump())},
          {"config", config},
          {"inputs", in},
          {"outputs", outj}};
}

// Processes every recording and writes <id>.rttm, label files, the speech
// timeline, summary.json and manifest.json to the output directory.
inline RunSummary RunDiarization(const PipelineConfig &cfg) {
  fs::create_directories(cfg.output_dir);
  RunSummary run;
  run.recordings.resize(cfg.recordings.size());
  internal::ParallelFor(cfg.recordings.size(), cfg.workers, [&](size_t i) {
    run.recordings[i] = ProcessRecording(cfg, cfg.recordings[i]);
  });

  std::vector<fs::path> inputs, outputs;
  json reports = json::array();
  for (size_t i = 0; i < cfg.recordings.size(); ++i) {
    const auto &rec = cfg.recordings[i];
    const auto &res = run.recordings[i];
    for (const auto &p : rec.vad) inputs.push_back(p);
    for (const auto &p : rec.osd) inputs.push_back(p);
    if (rec.speech) inputs.push_back(*rec.speech);
    inputs.push_back(rec.embeddings);
    if (rec.reference) inputs.push_back(*rec.reference);
    reports.push_back(res.report);
    if (!res.ok) {
      ++run.failures;
      continue;
    }
    auto write = [&](const std::string &name, const std::string &content) {
      fs::path p = cfg.output_dir / name;
      WriteFile(p, content);
      outputs.push_back(p);
    };
    write(rec.id + ".rttm", EmitRttm(res.hypothesis));
    write(rec.id + ".speech.lab", EmitLab(res.speech));
    write(rec.id + ".ahc.labels", EmitLabels(res.ahc_labels));
    if (cfg.vb_enabled) write(rec.id + ".vb.labels", EmitLabels(res.vb_labels));
  }
  run.summary = {{"recordings", reports},
                 {"failures", run.failures},
                 {"succeeded", static_cast<int>(cfg.recordings.size()) - run.failures}};
  WriteFile(cfg.output_dir / "summary.json", run.summary.dump(2) + "\n");
  run.manifest = MakeManifest(cfg.source, inputs, outputs);
  WriteFile(cfg.output_dir / "manifest.json", run.manifest.dump(2) + "\n");
  return run;
}

// ---------------------------------------------------------------------------
// Verification pipeline.

enum class CalibrationSource { kFitOnTrials, kModelFile, kFitOnFile, kIdentity };

struct SystemConfig {
  std::string name;
  fs::path embedding_dir;  // holds <utterance_id>.emb
  fs::path cohort;
  int top_k = kDefaultCohortTopK;
  double weight = 1.0;
  CalibrationSource calibration = CalibrationSource::kFitOnTrials;
  fs::path calibration_path;  // model file or labeled fit trials
};

struct VerificationConfig {
  fs::path output_dir;
  fs::path trials;
  double p_target = 0.05;
  int workers = 1;
  std::vector<SystemConfig> systems;
  json source;
};

inline VerificationConfig ParseVerificationConfig(const json &j, const fs::path &base_dir) {
  using internal::CheckKeys;
  using internal::Read;
  CheckKeys(j, {"output_dir", "trials", "p_target", "workers", "systems"},
            "verification config");
  VerificationConfig c;
  c.source = j;
  std::string p;
  Read(j, "output_dir", &p, "verification config");
  if (p.empty()) throw ConfigError("verification config needs 'output_dir'");
  c.output_dir = internal::Resolve(base_dir, p);
  p.clear();
  Read(j, "trials", &p, "verification config");
  if (p.empty()) throw ConfigError("verification config needs 'trials'");
  c.trials = internal::Resolve(base_dir, p);
  Read(j, "p_target", &c.p_target, "verification config");
  if (!(c.p_target > 0.0 && c.p_target < 1.0)) throw ConfigError("p_target must lie in (0, 1)");
  Read(j, "workers", &c.workers, "verification config");
  if (!j.contains("systems") || !j["systems"].is_array() || j["systems"].empty())
    throw ConfigError("verification config needs a non-empty 'systems' array");
  std::set<std::string> names;
  for (const auto &s : j["systems"]) {
    CheckKeys(s, {"name", "embedding_dir", "cohort", "top_k", "weight", "calibration"},
              "system");
    SystemConfig sys;
    Read(s, "name", &sys.name, "system");
    if (sys.name.empty() || !names.insert(sys.name).second)
      throw ConfigError("systems need unique, non-empty names");
    p.clear();
    Read(s, "embedding_dir", &p, "system");
    if (p.empty()) throw ConfigError("system '" + sys.name + "' needs 'embedding_dir'");
    sys.embedding_dir = internal::Resolve(base_dir, p);
    p.clear();
    Read(s, "cohort", &p, "system");
    if (p.empty()) throw ConfigError("system '" + sys.name + "' needs 'cohort'");
    sys.cohort = internal::Resolve(base_dir, p);
    Read(s, "top_k", &sys.top_k, "system");
    Read(s, "weight", &sys.weight, "system");
    if (!(sys.weight >= 0.0)) throw ConfigError("system weights must be non-negative");
    if (s.contains("calibration")) {
      const auto &cal = s["calibration"];
      CheckKeys(cal, {"model", "fit_trials", "identity"}, "calibration");
      int given = cal.contains("model") + cal.contains("fit_trials") + cal.contains("identity");
      if (given != 1)
        throw ConfigError("calibration needs exactly one of model, fit_trials, identity");
      if (cal.contains("identity")) {
        bool identity = false;
        Read(cal, "identity", &identity, "calibration");
        if (!identity) throw ConfigError("calibration.identity must be true when given");
        sys.calibration = CalibrationSource::kIdentity;
      } else {
        const char *key = cal.contains("model") ? "model" : "fit_trials";
        p.clear();
        Read(cal, key, &p, "calibration");
        sys.calibration_path = internal::Resolve(base_dir, p);
        sys.calibration = cal.contains("model") ? CalibrationSource::kModelFile
                                                : CalibrationSource::kFitOnFile;
      }
    }
    c.systems.push_back(std::move(sys));
  }
  double total_weight = 0.0;
  for (const auto &s : c.systems) total_weight += s.weight;
  if (!(total_weight > 0.0)) throw ConfigError("fusion weights are all zero");
  return c;
}

inline VerificationConfig LoadVerificationConfig(const fs::path &path) {
  return ParseVerificationConfig(internal::ParseJsonFile(path), path.parent_path());
}

struct UtteranceEmbedding {
  std::vector<double> vector;  // unit norm
  UtteranceMeta meta;
};

// Mean of an archive's (unit-normalized) records, renormalized; duration is
// the span from the first onset to the last end.
inline UtteranceEmbedding LoadUtterance(const fs::path &path) {
  EmbeddingSequence seq = ReadEmbeddings(path);
  if (seq.frames.empty()) throw FormatError(path.string() + " holds no embeddings");
  std::vector<double> mean(seq.dim, 0.0);
  double begin = seq.frames[0].segment.onset, end = seq.frames[0].segment.end();
  for (const auto &f : seq.frames) {
    auto unit = L2Normalized(f.vector);
    for (int d = 0; d < seq.dim; ++d) mean[d] += unit[d];
    begin = std::min(begin, f.segment.onset);
    end = std::max(end, f.segment.end());
  }
  return {L2Normalized(mean), UtteranceMeta{end - begin}};
}

struct ScoredTrials {
  std::vector<Trial> trials;
  std::vector<double> asnorm;
  std::vector<std::vector<double>> features;
};

// Cosine, AS-Norm and QMF features for every trial of one system.
class SystemScorer {
 public:
  SystemScorer(const SystemConfig &sys, const Cohort &cohort)
      : sys_(sys), cohort_(cohort) {}

  ScoredTrials Score(const std::vector<Trial> &trials, int workers) {
    for (const auto &t : trials) {
      Prepare(t.enroll_id);
      Prepare(t.test_id);
    }
    ScoredTrials out;
    out.trials = trials;
    out.asnorm.resize(trials.size());
    out.features.resize(trials.size());
    internal::ParallelFor(trials.size(), workers, [&](size_t i) {
      Trial &t = out.trials[i];
      const auto &e = utterances_.at(t.enroll_id);
      const auto &s = utterances_.at(t.test_id);
      t.raw_score = CosineScore(e.vector, s.vector);
      const auto &es = stats_.at(t.enroll_id);
      const auto &ts = stats_.at(t.test_id);
      out.asnorm[i] = AsNorm(*t.raw_score, es, ts);
      out.features[i] = QmfFeatures(t, e.meta, s.meta, es, ts);
    });
    return out;
  }

 private:
  void Prepare(const std::string &id) {
    if (utterances_.count(id)) return;
    auto utt = LoadUtterance(sys_.embedding_dir / (id + ".emb"));
    stats_[id] = ComputeCohortStats(utt.vector, cohort_, sys_.top_k, id);
    utterances_[id] = std::move(utt);
  }

  const SystemConfig &sys_;
  const Cohort &cohort_;
  std::map<std::string, UtteranceEmbedding> utterances_;
  std::map<std::string, CohortStats> stats_;
};

inline json VerificationMetrics(const std::vector<Trial> &trials,
                                const std::vector<double> &scores, double p_target) {
  std::vector<double> tar, non;
  for (size_t i = 0; i < trials.size(); ++i) {
    if (!trials[i].label) continue;
    (*trials[i].label ? tar : non).push_back(scores[i]);
  }
  if (tar.empty() || non.empty()) return nullptr;
  return {{"eer", Eer(tar, non)},
          {"min_dcf", MinDcf(tar, non, p_target)},
          {"targets", tar.size()},
          {"nontargets", non.size()}};
}

inline std::vector<ScoredPair> ToScoredPairs(const std::vector<Trial> &trials,
                                             const std::vector<double> &scores) {
  std::vector<ScoredPair> out;
  for (size_t i = 0; i < trials.size(); ++i)
    out.push_back({trials[i].enroll_id, trials[i].test_id, scores[i]});
  return out;
}

struct VerificationRun {
  json metrics;
  json manifest;
  std::vector<double> fused;
};

// Raises ConfigError for configuration problems and Error for data problems.
inline VerificationRun RunVerification(const VerificationConfig &cfg) {
  std::vector<Trial> trials;
  try {
    trials = ParseTrials(ReadFile(cfg.trials));
  } catch (const ParseError &e) {
    throw ConfigError(std::string("trial list: ") + e.what());
  }
  if (trials.empty()) throw ConfigError("trial list is empty");
  const bool labeled = std::all_of(trials.begin(), trials.end(),
                                   [](const Trial &t) { return t.label.has_value(); });
  for (const auto &sys : cfg.systems)
    if (sys.calibration == CalibrationSource::kFitOnTrials && !labeled)
      throw ConfigError("system '" + sys.name +
                        "' has no calibration model and the trials are unlabeled");

  fs::create_directories(cfg.output_dir);
  std::vector<fs::path> inputs = {cfg.trials}, outputs;
  auto write = [&](const std::string &name, const std::string &content) {
    fs::path p = cfg.output_dir / name;
    WriteFile(p, content);
    outputs.push_back(p);
  };

  VerificationRun run;
  run.metrics = {{"systems", json::object()}};
  std::vector<std::vector<double>> calibrated;
  std::vector<double> weights;
  for (const auto &sys : cfg.systems) {
    Cohort cohort;
    try {
      cohort = CohortFromEmbeddings(ReadEmbeddings(sys.cohort));
    } catch (const Error &e) {
      throw ConfigError("system '" + sys.name + "' cohort: " + e.what());
    }
    if (sys.top_k < 1 || static_cast<size_t>(sys.top_k) > cohort.size())
      throw ConfigError(fmt::format("system '{}': top_k {} exceeds cohort size {}",
                                    sys.name, sys.top_k, cohort.size()));
    inputs.push_back(sys.cohort);
    SystemScorer scorer(sys, cohort);
    ScoredTrials scored = scorer.Score(trials, cfg.workers);

    CalibrationModel model;
    switch (sys.calibration) {
      case CalibrationSource::kIdentity:
        model.feature_names = QmfFeatureNames();
        model.weights.assign(model.feature_names.size(), 0.0);
        model.weights[0] = 1.0;
        break;
      case CalibrationSource::kModelFile:
        model = CalibrationFromJson(internal::ParseJsonFile(sys.calibration_path));
        if (model.feature_names != QmfFeatureNames())
          throw ConfigError("calibration model features do not match the QMF set");
        inputs.push_back(sys.calibration_path);
        break;
      case CalibrationSource::kFitOnFile: {
        auto dev = ParseTrials(ReadFile(sys.calibration_path));
        inputs.push_back(sys.calibration_path);
        ScoredTrials dev_scored = scorer.Score(dev, cfg.workers);
        model = FitCalibration(dev_scored.trials, dev_scored.features, QmfFeatureNames());
        break;
      }
      case CalibrationSource::kFitOnTrials:
        model = FitCalibration(scored.trials, scored.features, QmfFeatureNames());
        break;
    }

    std::vector<double> raw, cal;
    std::string qmf;
    for (size_t i = 0; i < trials.size(); ++i) {
      raw.push_back(*scored.trials[i].raw_score);
      cal.push_back(ApplyCalibration(model, scored.features[i]));
      qmf += trials[i].enroll_id + " " + trials[i].test_id;
      for (double f : scored.features[i]) qmf += fmt::format(" {:.6f}", f);
      qmf += '\n';
    }
    write(sys.name + ".raw.scores", EmitScores(ToScoredPairs(trials, raw)));
    write(sys.name + ".asnorm.scores", EmitScores(ToScoredPairs(trials, scored.asnorm)));
    write(sys.name + ".qmf.txt", qmf);
    write(sys.name + ".calibration.json", CalibrationToJson(model).dump(2) + "\n");
    write(sys.name + ".calibrated.scores", EmitScores(ToScoredPairs(trials, cal)));
    run.metrics["systems"][sys.name] = {
        {"raw", VerificationMetrics(trials, raw, cfg.p_target)},
        {"asnorm", VerificationMetrics(trials, scored.asnorm, cfg.p_target)},
        {"calibrated", VerificationMetrics(trials, cal, cfg.p_target)}};
    calibrated.push_back(std::move(cal));
    weights.push_back(sys.weight);
  }

  run.fused.resize(trials.size());
  std::vector<double> per_system(calibrated.size());
  for (size_t i = 0; i < trials.size(); ++i) {
    for (size_t k = 0; k < calibrated.size(); ++k) per_system[k] = calibrated[k][i];
    run.fused[i] = Fuse(per_system, weights);
  }
  write("fused.scores", EmitScores(ToScoredPairs(trials, run.fused)));
  run.metrics["fused"] = VerificationMetrics(trials, run.fused, cfg.p_target);
  run.metrics["p_target"] = cfg.p_target;
  write("metrics.json", run.metrics.dump(2) + "\n");
  run.manifest = MakeManifest(cfg.source, inputs, outputs);
  WriteFile(cfg.output_dir / "manifest.json", run.manifest.dump(2) + "\n");
  return run;
}

// ---------------------------------------------------------------------------
// Cohort construction: one averaged vector per speaker archive.

// Each <speaker>.emb in `dir` holds that speaker's utterance embeddings; at
// most `max_per_speaker` records are drawn at random (seeded), averaged and
// normalized. Speakers are visited in sorted file-name order.
inline EmbeddingSequence BuildCohort(const fs::path &dir, int max_per_speaker,
                                     uint64_t seed) {
  if (max_per_speaker < 1) throw ConfigError("max_per_speaker must be positive");
  std::vector<fs::path> files;
  for (const auto &entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".emb")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .emb files in " + dir.string());

  std::mt19937_64 rng(seed);
  EmbeddingSequence cohort;
  cohort.recording_id = "cohort";
  for (const auto &file : files) {
    EmbeddingSequence seq = ReadEmbeddings(file);
    if (seq.frames.empty()) continue;
    if (cohort.dim == 0) cohort.dim = seq.dim;
    if (seq.dim != cohort.dim) throw FormatError(file.string() + ": dimension mismatch");
    std::vector<size_t> order(seq.frames.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(order.size(), static_cast<size_t>(max_per_speaker)));
    std::vector<double> mean(seq.dim, 0.0);
    for (size_t i : order) {
      auto unit = L2Normalized(seq.frames[i].vector);
      for (int d = 0; d < seq.dim; ++d) mean[d] += unit[d];
    }
    double index = static_cast<double>(cohort.frames.size());
    cohort.frames.push_back({Segment{index, 1.0}, L2Normalized(mean)});
  }
  return cohort;
}

}  // namespace diarkit

#endif  // DIARKIT_PIPELINE_H_
