#pragma once

// 1D U-Net noise predictor eps(x_t, t, c).
//
// Encoder level k (length L / 2^k) runs its residual blocks, then the optional
// condition injection, and feeds a skip connection; a stride-2 conv moves to
// level k+1. The bottleneck is res -> inject -> res. The decoder mirrors the
// encoder with nearest-neighbour upsampling and skip concatenation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vgcdm/guidance.hpp"
#include "vgcdm/layers.hpp"

namespace vgcdm {

struct DenoiserConfig {
  int length = 2048;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 4, 8};
  int res_blocks_per_level = 1;
  int time_embed_dim = 128;
  int n_heads = 4;
  int inner_dim = 128;
  int encoder_depth = 2;
  int norm_groups = 8;
  bool condition_enabled = true;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int channels(int level) const { return base_channels * channel_multipliers.at(level); }
  ConditionEncoderConfig encoder_config() const { return {encoder_depth, inner_dim, n_heads}; }
  void validate() const;

  bool operator==(const DenoiserConfig&) const = default;
};

// Sinusoidal embedding, interleaved: [sin(t w_0), cos(t w_0), sin(t w_1), ...],
// w_i = 10000^(-i / (dim/2)).
std::vector<double> time_embedding(int t, int dim);

// Condition latents for every injection site (levels then bottleneck), token-major
// [B, L_site, inner_dim]. Independent of x_t and t, so samplers compute it once.
template <typename Real>
struct ConditionLatents {
  std::vector<nn::Tensor<Real>> sites;
};

template <typename Real>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);
  // Copies would alias parameter storage.
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;
  Denoiser(Denoiser&&) = default;
  Denoiser& operator=(Denoiser&&) = default;

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore<Real>& params() { return store_; }
  const nn::ParamStore<Real>& params() const { return store_; }

  int injection_sites() const { return cfg_.condition_enabled ? cfg_.levels() + 1 : 0; }

  // c [B, 1, L]
  ConditionLatents<Real> encode_condition(const nn::Tensor<Real>& c) const;

  // x_t [B, 1, L], one step index per batch row; a null condition skips every
  // injection (the unconditional path). `trace_site` selects an injection site
  // whose attention internals are written to `trace`.
  nn::Tensor<Real> forward(const nn::Tensor<Real>& x_t, std::span<const int> t,
                           const ConditionLatents<Real>* condition,
                           typename CrossAttentionInjector<Real>::Trace* trace = nullptr,
                           int trace_site = 0) const;

  // Convenience overload taking the raw condition signal.
  nn::Tensor<Real> forward(const nn::Tensor<Real>& x_t, std::span<const int> t,
                           const std::optional<nn::Tensor<Real>>& c) const;

  // Sequence length at injection site `site` (0..levels-1 = encoder levels, levels = bottleneck).
  int site_length(int site) const;

 private:
  struct ResBlock {
    nn::GroupNorm<Real> norm1, norm2;
    nn::Conv1d<Real> conv1, conv2;
    nn::Linear<Real> time_proj;
    std::optional<nn::Conv1d<Real>> skip;
  };

  ResBlock make_res(const std::string& name, int in, int out, Rng& rng);
  nn::Tensor<Real> run_res(const ResBlock& block, const nn::Tensor<Real>& x,
                           const nn::Tensor<Real>& temb_act) const;
  nn::Tensor<Real> inject(int site, const nn::Tensor<Real>& h, const ConditionLatents<Real>* cond,
                          typename CrossAttentionInjector<Real>::Trace* trace,
                          int trace_site) const;

  DenoiserConfig cfg_;
  nn::ParamStore<Real> store_;

  nn::Conv1d<Real> stem_;
  nn::Linear<Real> time1_, time2_;
  std::vector<std::vector<ResBlock>> down_;
  std::vector<nn::Conv1d<Real>> downsample_;
  ResBlock mid1_, mid2_;
  std::vector<std::vector<ResBlock>> up_;  // indexed by level
  std::vector<nn::Conv1d<Real>> upsample_;  // upsample_[k] maps level k -> k-1
  nn::GroupNorm<Real> out_norm_;
  nn::Conv1d<Real> out_conv_;

  std::optional<ConditionEncoder<Real>> encoder_;
  std::vector<CrossAttentionInjector<Real>> injectors_;
};

}  // namespace vgcdm
