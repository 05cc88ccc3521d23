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

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gtest/gtest.h"

#include "diarkit/metrics.h"
#include "diarkit/pipeline.h"
#include "synthetic.h"

namespace diarkit {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("diarkit_pipeline_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path &path() const { return path_; }

 private:
  fs::path path_;
};

json MinimalDiarConfig() {
  return {{"output_dir", "out"},
          {"recordings", {{{"id", "a"}, {"speech", "a.lab"}, {"embeddings", "a.emb"}}}}};
}

TEST(PipelineConfig, RejectsUnknownKeys) {
  auto j = MinimalDiarConfig();
  j["mystery"] = 1;
  EXPECT_THROW(ParsePipelineConfig(j, "/tmp"), ConfigError);
  j = MinimalDiarConfig();
  j["vb"] = {{"fc", 2.0}, {"typo", true}};
  EXPECT_THROW(ParsePipelineConfig(j, "/tmp"), ConfigError);
  j = MinimalDiarConfig();
  j["recordings"][0]["vad"] = {"a.post"};
  EXPECT_THROW(ParsePipelineConfig(j, "/tmp"), ConfigError);
  j = MinimalDiarConfig();
  j["recordings"].push_back(j["recordings"][0]);
  EXPECT_THROW(ParsePipelineConfig(j, "/tmp"), ConfigError);
  j = MinimalDiarConfig();
  j["scoring"] = {{"collar", -0.1}};
  EXPECT_THROW(ParsePipelineConfig(j, "/tmp"), ConfigError);
}

TEST(PipelineConfig, ResolvesRelativePaths) {
  auto j = MinimalDiarConfig();
  j["recordings"][0]["reference"] = "/abs/ref.rttm";
  auto c = ParsePipelineConfig(j, "/data/run");
  EXPECT_EQ(c.output_dir, fs::path("/data/run/out"));
  ASSERT_EQ(c.recordings.size(), 1u);
  EXPECT_EQ(*c.recordings[0].speech, fs::path("/data/run/a.lab"));
  EXPECT_EQ(c.recordings[0].embeddings, fs::path("/data/run/a.emb"));
  EXPECT_EQ(*c.recordings[0].reference, fs::path("/abs/ref.rttm"));
}

json SyntheticConfig(const std::vector<json> &entries, const fs::path &out) {
  return {{"output_dir", out.string()},
          {"ahc", {{"threshold", 0.3}}},
          {"vb", {{"fc", 6.0}}},
          {"scoring", {{"collar", 0.0}}},
          {"recordings", entries}};
}

TEST(RunDiarization, RecoversSyntheticSpeakers) {
  TempDir dir;
  std::mt19937_64 rng(61);
  synthetic::RecordingSpec one{.id = "solo", .duration = 60.0, .speakers = 1};
  synthetic::RecordingSpec two{.id = "pair", .duration = 90.0, .speakers = 2};
  auto solo = synthetic::Generate(one, rng);
  auto pair = synthetic::Generate(two, rng);
  std::vector<json> entries = {synthetic::WriteRecording(solo, dir.path()),
                               synthetic::WriteRecording(pair, dir.path())};
  auto run = RunDiarization(ParsePipelineConfig(SyntheticConfig(entries, dir.path() / "out"),
                                                dir.path()));
  ASSERT_EQ(run.failures, 0);
  ASSERT_EQ(run.recordings.size(), 2u);

  const auto &s = run.recordings[0];
  ASSERT_TRUE(s.ok) << s.error;
  EXPECT_EQ(Speakers(s.hypothesis).size(), 1u);
  EXPECT_LT(Der(solo.truth, s.hypothesis, 0.0).der, 0.05);

  const auto &p = run.recordings[1];
  ASSERT_TRUE(p.ok) << p.error;
  EXPECT_EQ(Speakers(p.hypothesis).size(), 2u);
  EXPECT_LT(Der(pair.truth, p.hypothesis, 0.0).der, 0.05);

  for (const char *name : {"solo.rttm", "pair.rttm", "pair.ahc.labels", "pair.vb.labels",
                           "pair.speech.lab", "summary.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir.path() / "out" / name)) << name;
  for (const auto &[name, digest] : run.manifest["outputs"].items())
    EXPECT_EQ(digest, FileSha256(dir.path() / "out" / name)) << name;
  EXPECT_EQ(run.summary["succeeded"], 2);
}

TEST(RunDiarization, MissingInputFailsOnlyThatRecording) {
  TempDir dir;
  std::mt19937_64 rng(62);
  auto rec = synthetic::Generate({.id = "good", .duration = 40.0}, rng);
  std::vector<json> entries = {synthetic::WriteRecording(rec, dir.path())};
  json broken = entries[0];
  broken["id"] = "broken";
  broken["embeddings"] = (dir.path() / "nowhere.emb").string();
  entries.push_back(broken);
  auto run = RunDiarization(ParsePipelineConfig(SyntheticConfig(entries, dir.path() / "out"),
                                                dir.path()));
  EXPECT_EQ(run.failures, 1);
  EXPECT_TRUE(run.recordings[0].ok);
  EXPECT_FALSE(run.recordings[1].ok);
  EXPECT_FALSE(run.recordings[1].error.empty());
  EXPECT_TRUE(fs::exists(dir.path() / "out" / "good.rttm"));
  EXPECT_FALSE(fs::exists(dir.path() / "out" / "broken.rttm"));
  EXPECT_EQ(run.manifest["inputs"][(dir.path() / "nowhere.emb").string()], "missing");
}

// Speakers with well separated directions, a few noisy utterances each, and
// a cohort of unrelated directions.
struct VerificationData {
  fs::path emb_dir, cohort, trials, unlabeled;
};

VerificationData MakeVerificationData(const fs::path &dir, std::mt19937_64 &rng) {
  const int dim = 16, speakers = 6, utts = 4;
  VerificationData d{dir / "emb", dir / "cohort.emb", dir / "trials.txt", dir / "open.txt"};
  fs::create_directories(d.emb_dir);
  auto means = synthetic::SeparatedDirections(rng, speakers, dim, 45.0);
  std::normal_distribution<double> noise(0.0, 0.25);
  std::uniform_int_distribution<int> frames(2, 8);
  std::vector<std::string> ids;
  for (int s = 0; s < speakers; ++s)
    for (int u = 0; u < utts; ++u) {
      EmbeddingSequence seq;
      seq.recording_id = "s" + std::to_string(s) + "u" + std::to_string(u);
      seq.dim = dim;
      int n = frames(rng);
      for (int f = 0; f < n; ++f) {
        std::vector<double> v = means[s];
        for (auto &x : v) x += noise(rng);
        seq.frames.push_back({Segment{1.5 * f, 1.5}, v});
      }
      WriteEmbeddings(seq, d.emb_dir / (seq.recording_id + ".emb"));
      ids.push_back(seq.recording_id);
    }
  EmbeddingSequence cohort;
  cohort.dim = dim;
  for (int i = 0; i < 40; ++i)
    cohort.frames.push_back({Segment{double(i), 1.0}, synthetic::RandomUnit(rng, dim)});
  WriteEmbeddings(cohort, d.cohort);

  std::string labeled, open;
  for (size_t a = 0; a < ids.size(); ++a)
    for (size_t b = a + 1; b < ids.size(); ++b) {
      bool same = ids[a][1] == ids[b][1];
      labeled += ids[a] + " " + ids[b] + (same ? " target\n" : " nontarget\n");
      open += ids[a] + " " + ids[b] + "\n";
    }
  WriteFile(d.trials, labeled);
  WriteFile(d.unlabeled, open);
  return d;
}

json System(const std::string &name, const VerificationData &d, double weight,
            json calibration = nullptr) {
  json s = {{"name", name},
            {"embedding_dir", d.emb_dir.string()},
            {"cohort", d.cohort.string()},
            {"top_k", 10},
            {"weight", weight}};
  if (!calibration.is_null()) s["calibration"] = calibration;
  return s;
}

std::vector<double> ScoresOf(const fs::path &path) {
  std::vector<double> out;
  for (const auto &p : ParseScores(ReadFile(path))) out.push_back(p.score);
  return out;
}

TEST(RunVerification, IdentityCalibrationAndFusion) {
  TempDir dir;
  std::mt19937_64 rng(63);
  auto d = MakeVerificationData(dir.path(), rng);
  json identity = {{"identity", true}};
  json cfg = {{"output_dir", (dir.path() / "out").string()},
              {"trials", d.trials.string()},
              {"systems", {System("a", d, 1.0, identity), System("b", d, 1.0, identity)}}};
  auto run = RunVerification(ParseVerificationConfig(cfg, dir.path()));
  const fs::path out = dir.path() / "out";
  auto asnorm = ScoresOf(out / "a.asnorm.scores");
  auto cal = ScoresOf(out / "a.calibrated.scores");
  auto fused = ScoresOf(out / "fused.scores");
  ASSERT_EQ(asnorm.size(), cal.size());
  ASSERT_EQ(fused.size(), cal.size());
  for (size_t i = 0; i < cal.size(); ++i) {
    EXPECT_NEAR(cal[i], asnorm[i], 1e-6);
    EXPECT_NEAR(fused[i], cal[i], 1e-6);
  }
  EXPECT_LT(run.metrics["fused"]["eer"].get<double>(), 0.05);
  EXPECT_EQ(run.metrics["systems"]["a"]["raw"]["targets"], 6 * 6);
}

TEST(RunVerification, WeightedFusionOfFittedSystems) {
  TempDir dir;
  std::mt19937_64 rng(64);
  auto d = MakeVerificationData(dir.path(), rng);
  json cfg = {{"output_dir", (dir.path() / "out").string()},
              {"trials", d.trials.string()},
              {"systems",
               {System("a", d, 1.0), System("b", d, 1.0, {{"identity", true}}),
                System("c", d, 2.0, {{"fit_trials", d.trials.string()}})}}};
  auto run = RunVerification(ParseVerificationConfig(cfg, dir.path()));
  const fs::path out = dir.path() / "out";
  auto a = ScoresOf(out / "a.calibrated.scores");
  auto b = ScoresOf(out / "b.calibrated.scores");
  auto c = ScoresOf(out / "c.calibrated.scores");
  ASSERT_EQ(run.fused.size(), a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(run.fused[i], (a[i] + b[i] + 2 * c[i]) / 4, 1e-5);
    // Fitting on the scored trials or on the same list given as a file agree.
    EXPECT_NEAR(a[i], c[i], 1e-6);
  }
  auto model = CalibrationFromJson(json::parse(ReadFile(out / "a.calibration.json")));
  EXPECT_EQ(model.feature_names, QmfFeatureNames());
  EXPECT_GT(model.weights[0], 0.0);
  EXPECT_EQ(run.manifest["outputs"]["fused.scores"], FileSha256(out / "fused.scores"));
}

TEST(RunVerification, ConfigurationErrors) {
  TempDir dir;
  std::mt19937_64 rng(65);
  auto d = MakeVerificationData(dir.path(), rng);
  json cfg = {{"output_dir", (dir.path() / "out").string()},
              {"trials", d.unlabeled.string()},
              {"systems", {System("a", d, 1.0)}}};
  EXPECT_THROW(RunVerification(ParseVerificationConfig(cfg, dir.path())), ConfigError);

  cfg["trials"] = d.trials.string();
  cfg["systems"][0]["top_k"] = 1000;
  EXPECT_THROW(RunVerification(ParseVerificationConfig(cfg, dir.path())), ConfigError);

  cfg["systems"] = {System("a", d, 0.0)};
  EXPECT_THROW(ParseVerificationConfig(cfg, dir.path()), ConfigError);
  cfg["systems"] = {System("a", d, 1.0, {{"identity", true}, {"model", "m.json"}})};
  EXPECT_THROW(ParseVerificationConfig(cfg, dir.path()), ConfigError);
  cfg["systems"] = {System("a", d, 1.0), System("a", d, 1.0)};
  EXPECT_THROW(ParseVerificationConfig(cfg, dir.path()), ConfigError);
  cfg["systems"] = {System("a", d, 1.0)};
  cfg["p_target"] = 0.0;
  EXPECT_THROW(ParseVerificationConfig(cfg, dir.path()), ConfigError);
}

// ---------------------------------------------------------------------------
// Command-line front end.

int RunCli(const std::string &args, const fs::path &log) {
  std::string cmd = std::string(DIARKIT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(66);
    rec_ = synthetic::Generate({.id = "cli", .duration = 60.0}, rng);
    entry_ = synthetic::WriteRecording(rec_, dir_.path());
  }
  fs::path P(const std::string &name) const { return dir_.path() / name; }
  std::string Log() const { return ReadFile(P("log.txt")); }
  int Run(const std::string &args) { return RunCli(args, P("log.txt")); }

  TempDir dir_;
  synthetic::Recording rec_;
  json entry_;
};

TEST_F(CliTest, DiarizeExitCodes) {
  json cfg = SyntheticConfig({entry_}, P("out"));
  cfg["output_dir"] = "out";
  WriteFile(P("ok.json"), cfg.dump());
  EXPECT_EQ(Run("diarize --config " + P("ok.json").string()), 0) << Log();
  EXPECT_TRUE(fs::exists(P("out/cli.rttm")));
  auto summary = json::parse(Log());
  EXPECT_EQ(summary["failures"], 0);

  json broken = entry_;
  broken["id"] = "gone";
  broken["embeddings"] = P("gone.emb").string();
  cfg["recordings"].push_back(broken);
  WriteFile(P("partial.json"), cfg.dump());
  EXPECT_EQ(Run("diarize --config " + P("partial.json").string()), 1) << Log();

  cfg["ahc"]["linkage"] = "single";
  WriteFile(P("bad.json"), cfg.dump());
  EXPECT_EQ(Run("diarize --config " + P("bad.json").string()), 2) << Log();
  WriteFile(P("garbled.json"), "{ not json");
  EXPECT_EQ(Run("diarize --config " + P("garbled.json").string()), 2) << Log();
  EXPECT_EQ(Run("no-such-command"), 2);
  EXPECT_EQ(Run("diarize"), 2);
  EXPECT_EQ(Run("--help"), 0);
}

TEST_F(CliTest, StageCommands) {
  std::string streams;
  for (const auto &p : entry_["vad"]) streams += " " + p.get<std::string>();
  ASSERT_EQ(Run("vad-fuse --streams" + streams + " --out " + P("speech.lab").string()), 0)
      << Log();
  auto speech = ParseLab(ReadFile(P("speech.lab")));
  EXPECT_GT(TotalDuration(speech), 0.5 * TotalDuration(rec_.speech));

  const std::string emb = entry_["embeddings"];
  ASSERT_EQ(Run("cluster --embeddings " + emb + " --threshold 0.3 --out " +
                P("ahc.labels").string()),
            0)
      << Log();
  auto ahc = ParseLabels(ReadFile(P("ahc.labels")));
  EXPECT_EQ(ahc.size(), rec_.embeddings.frames.size());

  ASSERT_EQ(Run("resegment --embeddings " + emb + " --init " + P("ahc.labels").string() +
                " --fc 6 --out " + P("vb.labels").string()),
            0)
      << Log();
  auto report = json::parse(Log());
  EXPECT_EQ(report["final_speakers"], 2);
  EXPECT_EQ(ParseLabels(ReadFile(P("vb.labels"))).size(), ahc.size());
  EXPECT_EQ(Run("resegment --embeddings " + emb + " --init " + P("ahc.labels").string() +
                " --asnorm --out " + P("x.labels").string()),
            2);

  const std::string ref = entry_["reference"];
  ASSERT_EQ(Run("eval-der --ref " + ref + " --hyp " + ref + " --collar 0"), 0) << Log();
  auto der = json::parse(Log());
  EXPECT_EQ(der["overall"]["der"], 0.0);
  EXPECT_EQ(der["recordings"]["cli"]["jer"], 0.0);

  WriteFile(P("overlaps.lab"), "10.000 11.000\n");
  ASSERT_EQ(Run("overlap-assign --overlaps " + P("overlaps.lab").string() + " --diar " + ref +
                " --out " + P("ovl.rttm").string()),
            0)
      << Log();
  auto merged = ParseRttm(ReadFile(P("ovl.rttm")));
  ASSERT_EQ(merged.size(), 1u);
  auto speaker_time = [](const Diarization &d) {
    double total = 0;
    for (const auto &spk : Speakers(d)) total += TotalDuration(SpeakerTimeline(d, spk));
    return total;
  };
  EXPECT_GE(speaker_time(merged[0]), speaker_time(rec_.truth));

  WriteFile(P("scores.txt"), "a b 0.900000\na c 0.100000\nb c 0.200000\n");
  WriteFile(P("trials.txt"), "a b target\na c nontarget\nb c nontarget\n");
  ASSERT_EQ(Run("eval-ver --scores " + P("scores.txt").string() + " --trials " +
                P("trials.txt").string()),
            0)
      << Log();
  auto ver = json::parse(Log());
  EXPECT_EQ(ver["eer"], 0.0);
  EXPECT_EQ(ver["targets"], 1);
  WriteFile(P("open.txt"), "a b\n");
  EXPECT_EQ(Run("eval-ver --scores " + P("scores.txt").string() + " --trials " +
                P("open.txt").string()),
            2);
  EXPECT_EQ(Run("eval-ver --scores " + P("missing.txt").string() + " --trials " +
                P("trials.txt").string()),
            1);
}

TEST_F(CliTest, MakeCohortIsSeeded) {
  fs::create_directories(P("speakers"));
  std::mt19937_64 rng(67);
  for (int s = 0; s < 3; ++s) {
    EmbeddingSequence seq;
    seq.dim = 8;
    for (int u = 0; u < 10; ++u)
      seq.frames.push_back({Segment{double(u), 1.0}, synthetic::RandomUnit(rng, 8)});
    WriteEmbeddings(seq, P("speakers") / ("spk" + std::to_string(s) + ".emb"));
  }
  const std::string base = "make-cohort --speakers-dir " + P("speakers").string() +
                           " --max-per-speaker 4 --seed 9 --out ";
  ASSERT_EQ(Run(base + P("c1.emb").string()), 0) << Log();
  ASSERT_EQ(Run(base + P("c2.emb").string()), 0) << Log();
  EXPECT_EQ(ReadFile(P("c1.emb")), ReadFile(P("c2.emb")));
  auto cohort = ReadEmbeddings(P("c1.emb"));
  EXPECT_EQ(cohort.frames.size(), 3u);
  EXPECT_EQ(cohort.dim, 8);
}

}  // namespace
}  // namespace diarkit
