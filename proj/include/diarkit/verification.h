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

// Verification scoring: cosine scoring, adaptive symmetric score
// normalization against a cohort, logistic-regression calibration on
// quality-measure features, and weighted linear fusion.

#ifndef DIARKIT_VERIFICATION_H_
#define DIARKIT_VERIFICATION_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "Eigen/Dense"
#include "json.hpp"

#include "diarkit/core.h"

namespace diarkit {

inline constexpr double kSigmaFloor = 1e-6;
inline constexpr int kDefaultCohortTopK = 300;

// Imposter embeddings, every row unit-normalized.
struct Cohort {
  int dim = 0;
  std::vector<std::vector<double>> vectors;

  size_t size() const { return vectors.size(); }
};

inline Cohort MakeCohort(const std::vector<std::vector<double>> &rows) {
  Cohort cohort;
  for (const auto &row : rows) {
    if (cohort.vectors.empty())
      cohort.dim = static_cast<int>(row.size());
    else if (static_cast<int>(row.size()) != cohort.dim)
      throw ShapeError("cohort rows have different dimensions");
    cohort.vectors.push_back(L2Normalized(row));
  }
  return cohort;
}

inline Cohort CohortFromEmbeddings(const EmbeddingSequence &seq) {
  std::vector<std::vector<double>> rows;
  for (const auto &f : seq.frames) rows.push_back(f.vector);
  return MakeCohort(rows);
}

struct CohortStats {
  std::string utterance_id;
  double mu = 0.0;
  double sigma = 1.0;
  int top_k = kDefaultCohortTopK;
};

struct UtteranceMeta {
  double duration = 0.0;  // seconds
};

struct CalibrationModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<std::string> feature_names;
};

inline const std::vector<std::string> &QmfFeatureNames() {
  static const std::vector<std::string> names = {
      "asnorm_score", "log_enroll_duration", "log_test_duration",
      "enroll_cohort_mean", "test_cohort_mean"};
  return names;
}

// ---------------------------------------------------------------------------

inline double CosineScore(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different dimensions");
  double na = L2Norm(a), nb = L2Norm(b);
  if (!(na > 0.0) || !(nb > 0.0))
    throw DegenerateInputError("cosine score of a zero vector");
  double s = Dot(a, b) / (na * nb);
  return std::clamp(s, -1.0, 1.0);
}

// Mean and population stddev of the k largest scores.
inline CohortStats CohortStatsFromScores(std::vector<double> scores, int k) {
  if (k <= 0 || static_cast<size_t>(k) > scores.size())
    throw ConfigError("cohort top-k must be in [1, cohort size]");
  std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end(),
                   std::greater<>());
  double mean = 0.0;
  for (int i = 0; i < k; ++i) mean += scores[i];
  mean /= k;
  double var = 0.0;
  for (int i = 0; i < k; ++i) var += (scores[i] - mean) * (scores[i] - mean);
  var /= k;
  CohortStats stats;
  stats.mu = mean;
  stats.sigma = std::max(std::sqrt(var), kSigmaFloor);
  stats.top_k = k;
  return stats;
}

inline CohortStats ComputeCohortStats(std::span<const double> embedding,
                                      const Cohort &cohort,
                                      int k = kDefaultCohortTopK,
                                      std::string utterance_id = "") {
  if (k <= 0 || static_cast<size_t>(k) > cohort.size())
    throw ConfigError("cohort top-k must be in [1, cohort size]");
  std::vector<double> scores;
  scores.reserve(cohort.size());
  for (const auto &row : cohort.vectors) scores.push_back(CosineScore(embedding, row));
  CohortStats stats = CohortStatsFromScores(std::move(scores), k);
  stats.utterance_id = std::move(utterance_id);
  return stats;
}

inline double AsNorm(double raw, const CohortStats &enroll,
                     const CohortStats &test) {
  return 0.5 * ((raw - enroll.mu) / enroll.sigma + (raw - test.mu) / test.sigma);
}

// [as-normed score, log enroll duration, log test duration, mu_e, mu_t].
inline std::vector<double> QmfFeatures(const Trial &trial,
                                       const UtteranceMeta &enroll_meta,
                                       const UtteranceMeta &test_meta,
                                       const CohortStats &enroll_stats,
                                       const CohortStats &test_stats) {
  if (!trial.raw_score)
    throw DegenerateInputError("trial " + trial.enroll_id + " " + trial.test_id +
                               " has no raw score");
  if (!(enroll_meta.duration > 0.0) || !(test_meta.duration > 0.0))
    throw DegenerateInputError("utterance durations must be positive");
  return {AsNorm(*trial.raw_score, enroll_stats, test_stats),
          std::log(enroll_meta.duration), std::log(test_meta.duration),
          enroll_stats.mu, test_stats.mu};
}

inline double ApplyCalibration(const CalibrationModel &model,
                               std::span<const double> features) {
  if (features.size() != model.weights.size())
    throw ShapeError("feature vector does not match calibration model");
  return Dot(model.weights, features) + model.bias;
}

namespace internal {

// log(1 + exp(-m)) without overflow.
inline double SoftplusNeg(double m) {
  return std::log1p(std::exp(-std::abs(m))) + std::max(-m, 0.0);
}

}  // namespace internal

// Logistic regression by damped Newton iterations on the mean binary
// cross-entropy. Stops when the gradient norm drops to 1e-8, after 1000
// iterations, or when no step decreases the loss.
inline CalibrationModel FitCalibration(const std::vector<Trial> &trials,
                                       const std::vector<std::vector<double>> &features,
                                       std::vector<std::string> feature_names = {}) {
  const size_t M = trials.size();
  if (features.size() != M) throw ShapeError("one feature row per trial is required");
  if (M == 0) throw FitError("no trials to fit");
  const size_t F = features[0].size();
  if (M < F + 1) throw FitError("need at least F+1 trials");
  size_t positives = 0;
  for (size_t i = 0; i < M; ++i) {
    if (!trials[i].label) throw FitError("calibration trials must be labeled");
    positives += *trials[i].label == 1;
    if (features[i].size() != F) throw ShapeError("ragged feature matrix");
    for (double v : features[i])
      if (!std::isfinite(v)) throw FitError("non-finite feature value");
  }
  if (positives == 0 || positives == M)
    throw FitError("both target and non-target trials are required");

  const int P = static_cast<int>(F) + 1;
  Eigen::MatrixXd X(M, P);
  Eigen::VectorXd y(M);
  for (size_t i = 0; i < M; ++i) {
    for (size_t f = 0; f < F; ++f) X(i, f) = features[i][f];
    X(i, F) = 1.0;
    y(i) = *trials[i].label;
  }

  auto loss = [&](const Eigen::VectorXd &theta) {
    Eigen::VectorXd z = X * theta;
    double total = 0.0;
    for (size_t i = 0; i < M; ++i)
      total += internal::SoftplusNeg(y(i) > 0.5 ? z(i) : -z(i));
    return total / M;
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
  double current = loss(theta);
  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::VectorXd z = X * theta;
    Eigen::VectorXd p(M), w(M);
    for (size_t i = 0; i < M; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-z(i)));
      w(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd grad = X.transpose() * (p - y) / static_cast<double>(M);
    if (grad.norm() <= 1e-8) break;
    Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X / static_cast<double>(M);

    Eigen::VectorXd step;
    double damping = 0.0;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd h = hess;
      h.diagonal().array() += damping;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = ldlt.solve(-grad);
        if (step.allFinite()) break;
      }
      step.resize(0);
      damping = damping == 0.0 ? 1e-12 : damping * 10.0;
    }
    if (step.size() == 0) step = -grad;

    // Backtracking line search on the loss.
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Eigen::VectorXd candidate = theta + t * step;
      double value = loss(candidate);
      if (std::isfinite(value) && value < current) {
        theta = candidate;
        current = value;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
  }

  CalibrationModel model;
  model.weights.assign(theta.data(), theta.data() + F);
  model.bias = theta(F);
  if (feature_names.empty() && F == QmfFeatureNames().size())
    feature_names = QmfFeatureNames();
  for (size_t f = feature_names.size(); f < F; ++f)
    feature_names.push_back("f" + std::to_string(f));
  feature_names.resize(F);
  model.feature_names = std::move(feature_names);
  return model;
}

// Weight-normalized linear combination of per-system scores.
inline double Fuse(std::span<const double> scores, std::span<const double> weights) {
  if (scores.size() != weights.size() || scores.empty())
    throw ShapeError("one weight per system is required");
  double total = 0.0, acc = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] >= 0.0)) throw ConfigError("fusion weights must be non-negative");
    total += weights[k];
    acc += weights[k] * scores[k];
  }
  if (!(total > 0.0)) throw ConfigError("fusion weights are all zero");
  return acc / total;
}

// ---------------------------------------------------------------------------
// Calibration model file: {"feature_names": [...], "weights": [...], "bias": b}.

inline nlohmann::json CalibrationToJson(const CalibrationModel &model) {
  return nlohmann::json{{"feature_names", model.feature_names},
                        {"weights", model.weights},
                        {"bias", model.bias}};
}

inline CalibrationModel CalibrationFromJson(const nlohmann::json &j) {
  CalibrationModel model;
  try {
    for (const auto &[key, value] : j.items())
      if (key != "feature_names" && key != "weights" && key != "bias")
        throw FormatError("unknown calibration model key '" + key + "'");
    model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    model.weights = j.at("weights").get<std::vector<double>>();
    model.bias = j.at("bias").get<double>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("invalid calibration model: ") + e.what());
  }
  if (model.weights.size() != model.feature_names.size())
    throw FormatError("calibration model has mismatched names and weights");
  for (double w : model.weights)
    if (!std::isfinite(w)) throw FormatError("non-finite calibration weight");
  if (!std::isfinite(model.bias)) throw FormatError("non-finite calibration bias");
  return model;
}

}  // namespace diarkit

#endif  // DIARKIT_VERIFICATION_H_
