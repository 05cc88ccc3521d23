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

// Forward-only pooling layers: statistics pooling, multi-head attention
// pooling and its channel-shuffled variants.

#ifndef DIARKIT_POOLING_H_
#define DIARKIT_POOLING_H_

#include <algorithm>
#include <cmath>
#include <vector>

#include "diarkit/error.h"

namespace diarkit {

// C x T matrix of frame features, stored channel-major.
class FrameMatrix {
 public:
  FrameMatrix() = default;
  FrameMatrix(int channels, int frames)
      : channels_(channels), frames_(frames),
        data_(static_cast<size_t>(channels) * frames, 0.0) {
    if (channels <= 0 || frames < 0)
      throw ShapeError("frame matrix needs a positive channel count");
  }

  int channels() const { return channels_; }
  int frames() const { return frames_; }
  double &operator()(int c, int t) { return data_[Index(c, t)]; }
  double operator()(int c, int t) const { return data_[Index(c, t)]; }

  bool AllFinite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

 private:
  size_t Index(int c, int t) const {
    return static_cast<size_t>(c) * frames_ + t;
  }

  int channels_ = 0;
  int frames_ = 0;
  std::vector<double> data_;
};

// Affine map from a head's frame input to a scalar attention logit.
struct AttentionHead {
  std::vector<double> weight;
  double bias = 0.0;
};

struct PoolingConfig {
  int heads = 8;
  double epsilon = 1e-8;  // variance floor
  std::vector<AttentionHead> attention;
};

// Zero-initialized heads for an input of `channels` channels; every head
// then attends uniformly.
inline std::vector<AttentionHead> ZeroAttention(int channels, int heads,
                                                bool with_stats) {
  int group = channels / heads;
  int in_dim = with_stats ? 3 * group : group;
  return std::vector<AttentionHead>(heads,
                                    AttentionHead{std::vector<double>(in_dim), 0.0});
}

namespace internal {

inline void CheckFrames(const FrameMatrix &x) {
  if (x.frames() < 1) throw DegenerateInputError("pooling needs at least one frame");
  if (!x.AllFinite()) throw DegenerateInputError("pooling input is not finite");
}

// Weighted mean and floored standard deviation of channel c.
inline void WeightedMoments(const FrameMatrix &x, int c,
                            const std::vector<double> &w, double epsilon,
                            double *mean, double *stddev) {
  double m = 0.0;
  for (int t = 0; t < x.frames(); ++t) m += w[t] * x(c, t);
  double var = 0.0;
  for (int t = 0; t < x.frames(); ++t) {
    double d = x(c, t) - m;
    var += w[t] * d * d;
  }
  *mean = m;
  *stddev = std::sqrt(std::max(var, epsilon));
}

}  // namespace internal

// Per-channel mean then per-channel population standard deviation.
inline std::vector<double> StatsPool(const FrameMatrix &x,
                                     double epsilon = 1e-8) {
  internal::CheckFrames(x);
  const int C = x.channels();
  std::vector<double> uniform(x.frames(), 1.0 / x.frames());
  std::vector<double> out(2 * C);
  for (int c = 0; c < C; ++c)
    internal::WeightedMoments(x, c, uniform, epsilon, &out[c], &out[C + c]);
  return out;
}

// Output channel k*groups+g takes input channel g*(C/groups)+k.
inline FrameMatrix ChannelShuffle(const FrameMatrix &x, int groups) {
  const int C = x.channels();
  if (groups <= 0 || C % groups != 0)
    throw ShapeError("channel count is not divisible by the shuffle groups");
  const int per_group = C / groups;
  FrameMatrix out(C, x.frames());
  for (int g = 0; g < groups; ++g)
    for (int k = 0; k < per_group; ++k)
      for (int t = 0; t < x.frames(); ++t)
        out(k * groups + g, t) = x(g * per_group + k, t);
  return out;
}

// Attention weights of one head over time. Exposed for property tests.
inline std::vector<double> HeadAttentionWeights(const FrameMatrix &x, int head,
                                                const PoolingConfig &cfg,
                                                bool with_stats) {
  const int group = x.channels() / cfg.heads;
  const int first = head * group;
  const AttentionHead &params = cfg.attention[head];
  const size_t in_dim = with_stats ? 3 * group : group;
  if (params.weight.size() != in_dim)
    throw ShapeError("attention weight size does not match head input");

  // The group's global statistics are appended to every frame's slice.
  double stats_term = 0.0;
  if (with_stats) {
    std::vector<double> uniform(x.frames(), 1.0 / x.frames());
    for (int k = 0; k < group; ++k) {
      double mean, stddev;
      internal::WeightedMoments(x, first + k, uniform, cfg.epsilon, &mean,
                                &stddev);
      stats_term += params.weight[group + k] * mean +
                    params.weight[2 * group + k] * stddev;
    }
  }

  std::vector<double> logits(x.frames());
  for (int t = 0; t < x.frames(); ++t) {
    double z = params.bias + stats_term;
    for (int k = 0; k < group; ++k) z += params.weight[k] * x(first + k, t);
    logits[t] = z;
  }
  double max_logit = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (auto &z : logits) {
    z = std::exp(z - max_logit);
    total += z;
  }
  for (auto &z : logits) z /= total;
  return logits;
}

// Multi-head attention pooling. Channels are split into cfg.heads contiguous
// groups; output is all weighted means followed by all weighted stddevs.
inline std::vector<double> MhaPool(const FrameMatrix &x,
                                   const PoolingConfig &cfg, bool with_stats) {
  internal::CheckFrames(x);
  const int C = x.channels();
  if (cfg.heads <= 0 || C % cfg.heads != 0)
    throw ShapeError("channel count is not divisible by the head count");
  if (static_cast<int>(cfg.attention.size()) != cfg.heads)
    throw ShapeError("one attention head is required per group");
  const int group = C / cfg.heads;
  std::vector<double> out(2 * C);
  for (int h = 0; h < cfg.heads; ++h) {
    auto w = HeadAttentionWeights(x, h, cfg, with_stats);
    for (int k = 0; k < group; ++k) {
      int c = h * group + k;
      internal::WeightedMoments(x, c, w, cfg.epsilon, &out[c], &out[C + c]);
    }
  }
  return out;
}

// Concatenates the input with its channel shuffle (groups = heads), giving
// 2C channels, and pools them with MHA. Output has 4C entries.
inline std::vector<double> SmhaPool(const FrameMatrix &x,
                                    const PoolingConfig &cfg, bool with_stats) {
  const int C = x.channels();
  FrameMatrix shuffled = ChannelShuffle(x, cfg.heads);
  FrameMatrix joined(2 * C, x.frames());
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < x.frames(); ++t) {
      joined(c, t) = x(c, t);
      joined(C + c, t) = shuffled(c, t);
    }
  return MhaPool(joined, cfg, with_stats);
}

inline std::vector<double> SmhasPool(const FrameMatrix &x,
                                     const PoolingConfig &cfg) {
  return SmhaPool(x, cfg, /*with_stats=*/true);
}

}  // namespace diarkit

#endif  // DIARKIT_POOLING_H_
