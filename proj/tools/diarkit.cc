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

// diarkit: command-line front end for the diarization and verification
// pipelines and their individual stages.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diarkit/diarize.h"
#include "diarkit/io.h"
#include "diarkit/metrics.h"
#include "diarkit/overlap.h"
#include "diarkit/pipeline.h"
#include "diarkit/vadfuse.h"
#include "diarkit/vbhmm.h"
#include "diarkit/verification.h"

namespace {

using diarkit::json;
namespace fs = std::filesystem;

int RunDiarize(const std::string &config_path) {
  diarkit::PipelineConfig cfg = diarkit::LoadPipelineConfig(config_path);
  auto run = diarkit::RunDiarization(cfg);
  for (const auto &rec : run.recordings)
    if (!rec.ok) std::cerr << "diarkit: " << rec.id << ": " << rec.error << "\n";
  std::cout << run.summary.dump(2) << "\n";
  return run.failures ? diarkit::kExitFailures : diarkit::kExitOk;
}

int RunVerify(const std::string &config_path) {
  auto cfg = diarkit::LoadVerificationConfig(config_path);
  auto run = diarkit::RunVerification(cfg);
  std::cout << run.metrics.dump(2) << "\n";
  return diarkit::kExitOk;
}

int RunVadFuse(const std::vector<std::string> &streams, diarkit::FusionConfig cfg,
               const std::string &out) {
  cfg.Validate();
  std::vector<fs::path> paths(streams.begin(), streams.end());
  diarkit::WriteFile(out, diarkit::EmitLab(diarkit::SpeechFromStreams(paths, cfg)));
  return diarkit::kExitOk;
}

int RunCluster(const std::string &embeddings, double threshold, const std::string &out) {
  auto seq = diarkit::ReadEmbeddings(embeddings);
  auto labels = diarkit::Ahc(seq, diarkit::AhcConfig{threshold});
  std::vector<diarkit::LabeledWindow> windows;
  for (size_t i = 0; i < seq.frames.size(); ++i)
    windows.push_back({seq.frames[i].segment, labels[i]});
  diarkit::WriteFile(out, diarkit::EmitLabels(windows));
  return diarkit::kExitOk;
}

int RunResegment(const std::string &embeddings, const std::string &init,
                 diarkit::VbConfig cfg, const std::string &cohort_path,
                 const std::string &out) {
  if (cfg.asnorm && !cfg.mu_sigma_literal) {
    if (cohort_path.empty()) throw diarkit::ConfigError("--asnorm needs --cohort");
    cfg.cohort = std::make_shared<const diarkit::Cohort>(
        diarkit::CohortFromEmbeddings(diarkit::ReadEmbeddings(cohort_path)));
  }
  auto seq = diarkit::ReadEmbeddings(embeddings);
  auto windows = diarkit::ParseLabels(diarkit::ReadFile(init));
  if (windows.size() != seq.frames.size())
    throw diarkit::FormatError("label file and embedding archive differ in length");
  std::vector<int> labels;
  for (const auto &w : windows) labels.push_back(w.label);
  auto result = diarkit::VbResegment(diarkit::DenseLabels(labels), seq, cfg);
  for (size_t i = 0; i < windows.size(); ++i) windows[i].label = result.labels[i];
  diarkit::WriteFile(out, diarkit::EmitLabels(windows));
  json elbo = json::array();
  for (const auto &it : result.iterations) elbo.push_back(it.elbo);
  std::cout << json{{"initial_speakers", result.initial_speakers},
                    {"final_speakers", result.final_speakers},
                    {"iterations", result.iterations.size()},
                    {"converged", result.converged},
                    {"prior_updates_rejected", result.prior_updates_rejected},
                    {"elbo", elbo},
                    {"diagnostics", result.diagnostics}}
                   .dump(2)
            << "\n";
  return diarkit::kExitOk;
}

int RunOverlapAssign(const std::string &overlaps, const std::string &diar_path,
                     const std::string &out) {
  auto osd = diarkit::ParseLab(diarkit::ReadFile(overlaps));
  auto diars = diarkit::ParseRttm(diarkit::ReadFile(diar_path));
  std::string rttm;
  for (const auto &d : diars) {
    auto assigned = diarkit::AssignOverlaps(osd, d);
    for (const auto &msg : assigned.diagnostics) std::cerr << "diarkit: " << msg << "\n";
    rttm += diarkit::EmitRttm(diarkit::MergeOverlaps(d, assigned.assignments));
  }
  diarkit::WriteFile(out, rttm);
  return diarkit::kExitOk;
}

json BreakdownJson(const diarkit::DerBreakdown &b) {
  return {{"der", b.der},           {"miss", b.miss},
          {"false_alarm", b.false_alarm}, {"confusion", b.confusion},
          {"jer", b.jer},           {"scored_time", b.scored_time},
          {"collar", b.collar},     {"scored_overlap", b.scored_overlap},
          {"mapping", b.mapping}};
}

int RunEvalDer(const std::string &ref_path, const std::string &hyp_path, double collar,
               const std::string &uem_path) {
  auto refs = diarkit::ParseRttm(diarkit::ReadFile(ref_path));
  auto hyps = diarkit::ParseRttm(diarkit::ReadFile(hyp_path));
  std::map<std::string, diarkit::Timeline> uem;
  if (!uem_path.empty()) uem = diarkit::ParseUem(diarkit::ReadFile(uem_path));
  json per = json::object();
  double miss = 0, fa = 0, conf = 0, total = 0, jer = 0;
  for (const auto &ref : refs) {
    diarkit::Diarization hyp{ref.recording_id, {}};
    for (const auto &h : hyps)
      if (h.recording_id == ref.recording_id) hyp = h;
    std::optional<diarkit::Timeline> u;
    if (auto it = uem.find(ref.recording_id); it != uem.end()) u = it->second;
    auto b = diarkit::ScoreDiarization(ref, hyp, collar, u);
    per[ref.recording_id] = BreakdownJson(b);
    miss += b.miss * b.scored_time;
    fa += b.false_alarm * b.scored_time;
    conf += b.confusion * b.scored_time;
    total += b.scored_time;
    jer += b.jer;
  }
  json overall = nullptr;
  if (total > 0)
    overall = {{"der", (miss + fa + conf) / total},
               {"miss", miss / total},
               {"false_alarm", fa / total},
               {"confusion", conf / total},
               {"jer", jer / static_cast<double>(refs.size())},
               {"scored_time", total},
               {"collar", collar}};
  std::cout << json{{"recordings", per}, {"overall", overall}}.dump(2) << "\n";
  return diarkit::kExitOk;
}

int RunEvalVer(const std::string &scores_path, const std::string &trials_path,
               double p_target) {
  auto scores = diarkit::ParseScores(diarkit::ReadFile(scores_path));
  auto trials = diarkit::ParseTrials(diarkit::ReadFile(trials_path));
  std::map<std::pair<std::string, std::string>, double> lookup;
  for (const auto &s : scores) lookup[{s.enroll_id, s.test_id}] = s.score;
  std::vector<double> tar, non;
  for (const auto &t : trials) {
    if (!t.label) throw diarkit::UsageError("trial list must carry labels");
    auto it = lookup.find({t.enroll_id, t.test_id});
    if (it == lookup.end())
      throw diarkit::FormatError("no score for trial " + t.enroll_id + " " + t.test_id);
    (*t.label ? tar : non).push_back(it->second);
  }
  std::cout << json{{"eer", diarkit::Eer(tar, non)},
                    {"min_dcf", diarkit::MinDcf(tar, non, p_target)},
                    {"p_target", p_target},
                    {"targets", tar.size()},
                    {"nontargets", non.size()}}
                   .dump(2)
            << "\n";
  return diarkit::kExitOk;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"diarkit: speaker diarization and verification scoring"};
  app.require_subcommand(1);

  std::string config;
  auto *diarize = app.add_subcommand("diarize", "Run the diarization pipeline");
  diarize->add_option("--config", config, "JSON run config")->required();
  auto *verify = app.add_subcommand("verify", "Run the verification scoring pipeline");
  verify->add_option("--config", config, "JSON run config")->required();

  std::vector<std::string> streams;
  std::string out;
  diarkit::FusionConfig fusion;
  auto *vad = app.add_subcommand("vad-fuse", "Fuse posterior streams into segments");
  vad->add_option("--streams", streams, "posterior stream files")->required();
  vad->add_option("--threshold", fusion.threshold, "decision threshold");
  vad->add_option("--min-segment", fusion.min_segment, "shortest kept segment (s)");
  vad->add_option("--min-gap", fusion.min_gap, "shortest kept gap (s)");
  vad->add_option("--weights", fusion.weights, "per-stream weights");
  vad->add_option("--out", out, "output .lab file")->required();

  std::string embeddings;
  double threshold = 0.0;
  auto *cluster = app.add_subcommand("cluster", "AHC clustering of window embeddings");
  cluster->add_option("--embeddings", embeddings, "embedding archive")->required();
  cluster->add_option("--threshold", threshold, "stopping similarity");
  cluster->add_option("--out", out, "output label file")->required();

  std::string init, cohort;
  diarkit::VbConfig vb;
  auto *reseg = app.add_subcommand("resegment", "VB-HMM re-clustering");
  reseg->add_option("--embeddings", embeddings, "embedding archive")->required();
  reseg->add_option("--init", init, "initial label file")->required();
  reseg->add_option("--fa", vb.fa, "F_A");
  reseg->add_option("--fb", vb.fb, "F_B");
  reseg->add_option("--fc", vb.fc, "F_C");
  reseg->add_option("--loop-prob", vb.loop_prob, "speaker self-transition probability");
  reseg->add_option("--max-iters", vb.max_iters, "iteration cap");
  reseg->add_option("--elbo-tol", vb.elbo_tol, "convergence tolerance");
  reseg->add_option("--min-occupancy", vb.min_occupancy, "speaker drop threshold (frames)");
  reseg->add_flag("--asnorm", vb.asnorm, "cohort-normalized emissions");
  reseg->add_option("--cohort", cohort, "cohort embedding archive");
  reseg->add_option("--topk", vb.cohort_top_k, "cohort scores kept");
  reseg->add_flag("--mu-sigma-literal", vb.mu_sigma_literal,
                  "use statistics of the speaker mean's components");
  reseg->add_option("--out", out, "output label file")->required();

  std::string overlaps, diar_path;
  auto *ovl = app.add_subcommand("overlap-assign", "Assign speakers to overlap segments");
  ovl->add_option("--overlaps", overlaps, "overlap .lab file")->required();
  ovl->add_option("--diar", diar_path, "hypothesis RTTM")->required();
  ovl->add_option("--out", out, "output RTTM")->required();

  std::string ref, hyp, uem;
  double collar = 0.25;
  auto *eval_der = app.add_subcommand("eval-der", "Score a diarization (DER/JER)");
  eval_der->add_option("--ref", ref, "reference RTTM")->required();
  eval_der->add_option("--hyp", hyp, "hypothesis RTTM")->required();
  eval_der->add_option("--collar", collar, "collar (s)");
  eval_der->add_option("--uem", uem, "UEM file");

  std::string scores, trials;
  double p_target = 0.05;
  auto *eval_ver = app.add_subcommand("eval-ver", "Score verification trials (EER/minDCF)");
  eval_ver->add_option("--scores", scores, "score file")->required();
  eval_ver->add_option("--trials", trials, "labeled trial list")->required();
  eval_ver->add_option("--p-target", p_target, "target prior for minDCF");

  std::string speakers_dir;
  int max_per_speaker = 30;
  uint64_t seed = 0;
  auto *make_cohort = app.add_subcommand("make-cohort", "Average per-speaker embeddings");
  make_cohort->add_option("--speakers-dir", speakers_dir, "directory of <speaker>.emb")
      ->required();
  make_cohort->add_option("--max-per-speaker", max_per_speaker, "utterances per speaker");
  make_cohort->add_option("--seed", seed, "selection seed");
  make_cohort->add_option("--out", out, "cohort archive")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : diarkit::kExitConfig;
  }

  try {
    if (*diarize) return RunDiarize(config);
    if (*verify) return RunVerify(config);
    if (*vad) return RunVadFuse(streams, fusion, out);
    if (*cluster) return RunCluster(embeddings, threshold, out);
    if (*reseg) return RunResegment(embeddings, init, vb, cohort, out);
    if (*ovl) return RunOverlapAssign(overlaps, diar_path, out);
    if (*eval_der) return RunEvalDer(ref, hyp, collar, uem);
    if (*eval_ver) return RunEvalVer(scores, trials, p_target);
    if (*make_cohort) {
      diarkit::WriteEmbeddings(diarkit::BuildCohort(speakers_dir, max_per_speaker, seed),
                               out);
      return diarkit::kExitOk;
    }
  } catch (const diarkit::ConfigError &e) {
    std::cerr << "diarkit: configuration error: " << e.what() << "\n";
    return diarkit::kExitConfig;
  } catch (const diarkit::UsageError &e) {
    std::cerr << "diarkit: " << e.what() << "\n";
    return diarkit::kExitConfig;
  } catch (const std::exception &e) {
    std::cerr << "diarkit: " << e.what() << "\n";
    return diarkit::kExitFailures;
  }
  return diarkit::kExitOk;
}
