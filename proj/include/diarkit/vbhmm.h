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

// Bayesian HMM re-clustering of window embeddings (VB re-segmentation).
//
// The model is the usual VB-HMM speaker model with the across-class
// covariance collapsed to identity and x_t = rho_t = F_C * E_t, where E_t is
// the unit-norm window embedding. Each speaker has a posterior mean alpha_s
// with isotropic precision ell_s = 1 + (F_A/F_B) * sum_t gamma_ts, and
// frames move between speakers through an HMM with self-loop probability
// loop_prob. Optionally the alpha_s^T rho_t term is replaced by a cohort
// normalized score of E_t against the speaker's mean embedding beta_s.

#ifndef DIARKIT_VBHMM_H_
#define DIARKIT_VBHMM_H_

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fmt/format.h"

#include "diarkit/core.h"
#include "diarkit/diarize.h"
#include "diarkit/verification.h"

namespace diarkit {

struct VbConfig {
  double fa = 0.3;
  double fb = 17.0;
  double fc = 1.0;
  double loop_prob = 0.99;
  int max_iters = 20;
  double elbo_tol = 1e-4;
  double min_occupancy = 1.0;  // frames
  bool asnorm = false;
  // Use mean/stddev of beta_s's own components instead of cohort scores.
  bool mu_sigma_literal = false;
  std::shared_ptr<const Cohort> cohort;
  int cohort_top_k = kDefaultCohortTopK;

  void Validate() const {
    if (!(fa > 0.0) || !(fb > 0.0) || !(fc > 0.0))
      throw ConfigError("F_A, F_B and F_C must be positive");
    if (!(loop_prob > 0.0 && loop_prob < 1.0))
      throw ConfigError("loop probability must lie in (0, 1)");
    if (max_iters < 1) throw ConfigError("max_iters must be positive");
    if (!(min_occupancy >= 0.0)) throw ConfigError("min_occupancy must be non-negative");
    if (asnorm && !mu_sigma_literal) {
      if (!cohort || cohort->size() == 0)
        throw ConfigError("AS-Norm emissions need a cohort");
      if (cohort_top_k < 1 || static_cast<size_t>(cohort_top_k) > cohort->size())
        throw ConfigError("cohort top-k must be in [1, cohort size]");
    }
  }
};

// Dense row-major T x S matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  double &operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  std::vector<double> Column(size_t c) const {
    std::vector<double> out(rows_);
    for (size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }
  double ColumnSum(size_t c) const {
    double total = 0.0;
    for (size_t r = 0; r < rows_; ++r) total += (*this)(r, c);
    return total;
  }

 private:
  size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// gamma(t, s): posterior of speaker s at frame t; rows sum to one.
using PosteriorMatrix = Matrix;

struct SpeakerState {
  std::vector<double> alpha;
  double ell = 1.0;
  double pi = 0.0;
  std::vector<double> beta;
  double mu = 0.0;
  double sigma = 1.0;
  double occupancy = 0.0;
  bool dropped = false;
};

struct VbState {
  PosteriorMatrix gamma;
  std::vector<SpeakerState> speakers;
};

// M-step: speaker posteriors from frame responsibilities. Priors are set to
// occupancy fractions. A speaker without occupancy is flagged and zeroed.
inline std::vector<SpeakerState> VbMStep(const PosteriorMatrix &gamma,
                                         const EmbeddingSequence &seq,
                                         const VbConfig &cfg) {
  const size_t T = gamma.rows(), S = gamma.cols();
  const size_t D = static_cast<size_t>(seq.dim);
  if (seq.frames.size() != T) throw ShapeError("gamma rows do not match frames");
  const double ratio = cfg.fa / cfg.fb;

  std::vector<SpeakerState> states(S);
  double total_occupancy = 0.0;
  for (size_t s = 0; s < S; ++s) {
    auto &st = states[s];
    st.alpha.assign(D, 0.0);
    st.beta.assign(D, 0.0);
    double occ = 0.0;
    for (size_t t = 0; t < T; ++t) {
      double g = gamma(t, s);
      if (g == 0.0) continue;
      occ += g;
      const auto &e = seq.frames[t].vector;
      for (size_t d = 0; d < D; ++d) st.beta[d] += g * e[d];
    }
    st.occupancy = occ;
    total_occupancy += occ;
    if (!(occ > 0.0)) {
      st.dropped = true;
      st.ell = 1.0;
      st.beta.assign(D, 0.0);
      st.mu = 0.0;
      st.sigma = 1.0;
      continue;
    }
    st.ell = 1.0 + ratio * occ;
    // alpha = ratio / ell * sum_t gamma * F_C * E_t = ratio / ell * F_C * occ * beta
    for (size_t d = 0; d < D; ++d) {
      st.alpha[d] = ratio / st.ell * cfg.fc * st.beta[d];
      st.beta[d] /= occ;
    }
    if (cfg.asnorm) {
      if (cfg.mu_sigma_literal) {
        double mean = 0.0;
        for (double v : st.beta) mean += v;
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (double v : st.beta) var += (v - mean) * (v - mean);
        var /= static_cast<double>(D);
        st.mu = mean;
        st.sigma = std::max(std::sqrt(var), kSigmaFloor);
      } else {
        if (!cfg.cohort) throw ConfigError("AS-Norm emissions need a cohort");
        auto stats = ComputeCohortStats(L2Normalized(st.beta), *cfg.cohort,
                                        cfg.cohort_top_k);
        st.mu = stats.mu;
        st.sigma = stats.sigma;
      }
    }
  }
  for (auto &st : states)
    st.pi = total_occupancy > 0.0 ? st.occupancy / total_occupancy : 0.0;
  return states;
}

// One-hot responsibilities from hard labels, one M-step, uniform priors.
inline VbState VbInit(const std::vector<int> &labels, const EmbeddingSequence &seq,
                      const VbConfig &cfg) {
  if (labels.size() != seq.frames.size())
    throw ShapeError("one initial label per frame is required");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ShapeError("labels must be non-negative");
    max_label = std::max(max_label, l);
  }
  const size_t S = static_cast<size_t>(max_label + 1);
  if (S == 0) throw DegenerateInputError("no speakers in the initial labels");
  VbState state;
  state.gamma = PosteriorMatrix(labels.size(), S, 0.0);
  for (size_t t = 0; t < labels.size(); ++t) state.gamma(t, labels[t]) = 1.0;
  state.speakers = VbMStep(state.gamma, seq, cfg);
  for (auto &st : state.speakers) st.pi = 1.0 / static_cast<double>(S);
  return state;
}

// Per-frame speaker log-likelihoods with the speaker-independent terms
// (-0.5 * F_A * (||rho_t||^2 + D log 2 pi)) dropped.
inline Matrix VbEmissionLoglik(const std::vector<SpeakerState> &states,
                               const EmbeddingSequence &seq, const VbConfig &cfg,
                               std::vector<std::string> *diagnostics = nullptr) {
  const size_t T = seq.frames.size(), S = states.size();
  const double D = static_cast<double>(seq.dim);
  const double scale = cfg.fa * cfg.fc * cfg.fc / cfg.fb;
  Matrix out(T, S);
  for (size_t s = 0; s < S; ++s) {
    const auto &st = states[s];
    double sigma = st.sigma;
    if (cfg.asnorm && !(sigma > 0.0)) {
      if (diagnostics)
        diagnostics->push_back(fmt::format(
            "speaker {} has sigma {} <= 0; floored at {}", s, sigma, kSigmaFloor));
      sigma = kSigmaFloor;
    }
    const double penalty = 0.5 * (D / st.ell + Dot(st.alpha, st.alpha));
    for (size_t t = 0; t < T; ++t) {
      const auto &e = seq.frames[t].vector;
      double cross;
      if (cfg.asnorm) {
        double z = (Dot(st.beta, e) - st.mu) / sigma;
        cross = scale / st.ell * z * st.occupancy;
      } else {
        cross = cfg.fc * Dot(st.alpha, e);
      }
      out(t, s) = cfg.fa * (cross - penalty);
    }
  }
  return out;
}

namespace internal {

inline double LogSumExp(const double *v, size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) total += std::exp(v[i] - m);
  return m + std::log(total);
}

}  // namespace internal

// log transition matrix: stay with loop_prob, otherwise jump to s' != s with
// probability proportional to pi_s'. A single speaker always stays.
inline Matrix VbLogTransitions(std::span<const double> pi, double loop_prob) {
  const size_t S = pi.size();
  Matrix log_a(S, S, 0.0);
  if (S == 1) return log_a;
  for (size_t r = 0; r < S; ++r) {
    double others = 0.0;
    for (size_t s = 0; s < S; ++s)
      if (s != r) others += pi[s];
    for (size_t s = 0; s < S; ++s) {
      double p;
      if (s == r)
        p = loop_prob;
      else if (others > 0.0)
        p = (1.0 - loop_prob) * pi[s] / others;
      else
        p = (1.0 - loop_prob) / static_cast<double>(S - 1);
      log_a(r, s) = std::log(p);
    }
  }
  return log_a;
}

struct EStepResult {
  PosteriorMatrix gamma;
  double log_evidence = 0.0;
  Matrix jumps;  // expected number of r -> s transitions, r != s
};

// Log-domain forward-backward. The initial state distribution is pi.
inline EStepResult VbEStep(const Matrix &loglik, std::span<const double> pi,
                           const VbConfig &cfg) {
  const size_t T = loglik.rows(), S = loglik.cols();
  if (pi.size() != S) throw ShapeError("one prior per speaker is required");
  if (S == 0 || T == 0) throw DegenerateInputError("empty emission matrix");
  for (size_t t = 0; t < T; ++t)
    for (size_t s = 0; s < S; ++s)
      if (std::isnan(loglik(t, s)))
        throw ComputationError("NaN in emission log-likelihoods");

  const Matrix log_a = VbLogTransitions(pi, cfg.loop_prob);
  Matrix fwd(T, S), bwd(T, S, 0.0);
  std::vector<double> buf(S);
  for (size_t s = 0; s < S; ++s) fwd(0, s) = std::log(pi[s]) + loglik(0, s);
  for (size_t t = 1; t < T; ++t)
    for (size_t s = 0; s < S; ++s) {
      for (size_t r = 0; r < S; ++r) buf[r] = fwd(t - 1, r) + log_a(r, s);
      fwd(t, s) = loglik(t, s) + internal::LogSumExp(buf.data(), S);
    }
  for (size_t t = T - 1; t-- > 0;)
    for (size_t r = 0; r < S; ++r) {
      for (size_t s = 0; s < S; ++s)
        buf[s] = log_a(r, s) + loglik(t + 1, s) + bwd(t + 1, s);
      bwd(t, r) = internal::LogSumExp(buf.data(), S);
    }

  EStepResult out;
  for (size_t s = 0; s < S; ++s) buf[s] = fwd(T - 1, s);
  out.log_evidence = internal::LogSumExp(buf.data(), S);
  if (!std::isfinite(out.log_evidence))
    throw ComputationError("log evidence is not finite");
  out.jumps = Matrix(S, S);
  for (size_t t = 1; t < T; ++t)
    for (size_t r = 0; r < S; ++r)
      for (size_t s = 0; s < S; ++s)
        if (r != s)
          out.jumps(r, s) += std::exp(fwd(t - 1, r) + log_a(r, s) + loglik(t, s) +
                                      bwd(t, s) - out.log_evidence);
  out.gamma = PosteriorMatrix(T, S);
  for (size_t t = 0; t < T; ++t) {
    double row = 0.0;
    for (size_t s = 0; s < S; ++s) {
      double g = std::exp(fwd(t, s) + bwd(t, s) - out.log_evidence);
      out.gamma(t, s) = g;
      row += g;
    }
    for (size_t s = 0; s < S; ++s) out.gamma(t, s) /= row;
  }
  return out;
}

// Evidence lower bound: forward-backward log evidence minus F_B times the KL
// divergence of each speaker posterior from the standard normal prior.
inline double VbElbo(double log_evidence, const std::vector<SpeakerState> &states,
                     int dim, const VbConfig &cfg) {
  double kl = 0.0;
  for (const auto &st : states) {
    double inv_ell = 1.0 / st.ell;
    kl += 0.5 * (dim * (inv_ell - 1.0 - std::log(inv_ell)) + Dot(st.alpha, st.alpha));
  }
  return log_evidence - cfg.fb * kl;
}

// Expected log prior of the state sequence under priors `pi`, using the
// E-step statistics of the speakers listed in `kept`.
inline double VbPriorObjective(const EStepResult &e, std::span<const size_t> kept,
                               std::span<const double> pi, double loop_prob) {
  const Matrix log_a = VbLogTransitions(pi, loop_prob);
  auto term = [](double weight, double log_p) { return weight > 0.0 ? weight * log_p : 0.0; };
  double q = 0.0;
  for (size_t a = 0; a < kept.size(); ++a) {
    q += term(e.gamma(0, kept[a]), std::log(pi[a]));
    for (size_t b = 0; b < kept.size(); ++b)
      if (a != b) q += term(e.jumps(kept[a], kept[b]), log_a(a, b));
  }
  return q;
}

struct VbIteration {
  double elbo = 0.0;
  double log_evidence = 0.0;
  int speakers = 0;
};

struct VbResult {
  std::vector<int> labels;
  PosteriorMatrix gamma;
  std::vector<SpeakerState> speakers;
  std::vector<VbIteration> iterations;
  int initial_speakers = 0;
  int final_speakers = 0;
  bool converged = false;
  int prior_updates_rejected = 0;
  std::vector<std::string> diagnostics;
};

namespace internal {

inline size_t ArgMax(const PosteriorMatrix &g, size_t t) {
  size_t best = 0;
  for (size_t s = 1; s < g.cols(); ++s)
    if (g(t, s) > g(t, best)) best = s;
  return best;
}

// Removes speakers with occupancy below the floor (always keeping the
// largest) and renormalizes the remaining responsibilities.
inline PosteriorMatrix DropSpeakers(const PosteriorMatrix &gamma, double min_occupancy,
                                    std::vector<size_t> *kept) {
  const size_t T = gamma.rows(), S = gamma.cols();
  kept->clear();
  size_t largest = 0;
  std::vector<double> occ(S);
  for (size_t s = 0; s < S; ++s) {
    occ[s] = gamma.ColumnSum(s);
    if (occ[s] > occ[largest]) largest = s;
  }
  for (size_t s = 0; s < S; ++s)
    if (occ[s] >= min_occupancy || s == largest) kept->push_back(s);
  if (kept->size() == S) return gamma;
  PosteriorMatrix out(T, kept->size());
  for (size_t t = 0; t < T; ++t) {
    double row = 0.0;
    for (size_t k = 0; k < kept->size(); ++k) row += gamma(t, (*kept)[k]);
    for (size_t k = 0; k < kept->size(); ++k)
      out(t, k) = row > 0.0 ? gamma(t, (*kept)[k]) / row
                            : 1.0 / static_cast<double>(kept->size());
  }
  return out;
}

}  // namespace internal

// Iterates (emission, E-step, speaker dropping, M-step) from the AHC labels
// until the ELBO gain falls below elbo_tol or max_iters is reached. Output
// labels are the per-frame argmax, densely renumbered.
inline VbResult VbResegment(const std::vector<int> &labels,
                            const EmbeddingSequence &input, const VbConfig &cfg) {
  cfg.Validate();
  const EmbeddingSequence seq = NormalizeEmbeddings(input);
  VbState state = VbInit(labels, seq, cfg);
  VbResult result;
  result.initial_speakers = static_cast<int>(state.speakers.size());

  PosteriorMatrix gamma = state.gamma;
  std::vector<SpeakerState> speakers = state.speakers;
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    Matrix loglik = VbEmissionLoglik(speakers, seq, cfg, &result.diagnostics);
    std::vector<double> pi(speakers.size());
    for (size_t s = 0; s < speakers.size(); ++s) pi[s] = speakers[s].pi;
    EStepResult e = VbEStep(loglik, pi, cfg);
    double elbo = VbElbo(e.log_evidence, speakers, seq.dim, cfg);
    result.iterations.push_back(
        VbIteration{elbo, e.log_evidence, static_cast<int>(speakers.size())});

    std::vector<size_t> kept;
    gamma = internal::DropSpeakers(e.gamma, cfg.min_occupancy, &kept);
    if (kept.size() < speakers.size())
      result.diagnostics.push_back(fmt::format(
          "iteration {}: dropped {} speaker(s)", iter + 1,
          speakers.size() - kept.size()));
    // Priors move to the occupancy fractions unless that lowers the
    // expected log prior, which keeps the ELBO from decreasing.
    std::vector<double> old_pi;
    for (size_t k : kept) old_pi.push_back(pi[k]);
    double old_total = std::accumulate(old_pi.begin(), old_pi.end(), 0.0);
    for (auto &p : old_pi) p /= old_total;
    speakers = VbMStep(gamma, seq, cfg);
    std::vector<double> new_pi;
    for (const auto &st : speakers) new_pi.push_back(st.pi);
    if (VbPriorObjective(e, kept, new_pi, cfg.loop_prob) <
        VbPriorObjective(e, kept, old_pi, cfg.loop_prob)) {
      for (size_t s = 0; s < speakers.size(); ++s) speakers[s].pi = old_pi[s];
      ++result.prior_updates_rejected;
    }

    if (iter > 0 && elbo - previous < cfg.elbo_tol) {
      result.converged = true;
      break;
    }
    previous = elbo;
  }

  std::vector<int> raw(gamma.rows());
  for (size_t t = 0; t < gamma.rows(); ++t)
    raw[t] = static_cast<int>(internal::ArgMax(gamma, t));
  result.labels = DenseLabels(raw);
  result.gamma = std::move(gamma);
  result.speakers = std::move(speakers);
  int used = 0;
  for (int l : result.labels) used = std::max(used, l + 1);
  result.final_speakers = used;
  return result;
}

}  // namespace diarkit

#endif  // DIARKIT_VBHMM_H_
