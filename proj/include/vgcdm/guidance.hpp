#pragma once

// Voltage-condition guidance: the condition encoder, the cross-attention block
// that lets denoiser latents attend to the encoded condition, and the
// zero-initialised residual that injects the result.

#include <filesystem>
#include <string>
#include <vector>

#include "vgcdm/layers.hpp"

namespace vgcdm {

struct ConditionEncoderConfig {
  int depth = 2;
  int inner_dim = 128;
  int n_heads = 4;

  int head_dim() const { return inner_dim / n_heads; }
  void validate() const;
};

// Fixed sinusoidal position code, row-major [n, dim], for n tokens each
// covering `stride` consecutive samples of a `length`-sample record. Periods
// run geometrically from 4 samples to `length` over kPositionFrequencies
// sin/cos pairs of amplitude kPositionAmplitude; dimensions beyond those pairs
// are zero.
inline constexpr int kPositionFrequencies = 8;
inline constexpr double kPositionAmplitude = 4.0;
std::vector<double> position_code(int n, int stride, int length, int dim);

// depth x {conv -> layer norm -> multi-head self-attention (residual)}; the
// position code is added to the first block's normalized tokens.
template <typename Real>
class ConditionEncoder {
 public:
  ConditionEncoder() = default;
  ConditionEncoder(const ConditionEncoderConfig& cfg, nn::ParamStore<Real>& store,
                   const std::string& name, Rng& rng);

  // c [B, 1, L] -> latent [B, inner_dim, L]
  nn::Tensor<Real> operator()(const nn::Tensor<Real>& c) const;

  const ConditionEncoderConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::Conv1d<Real> conv;
    nn::LayerNorm<Real> norm;
    nn::MultiHeadAttention<Real> attn;
  };
  ConditionEncoderConfig cfg_;
  std::vector<Block> blocks_;
};

// z = h + ZeroConv(FF(CrossAttention(LN(h) + P, c))), P the position code of
// the latent's tokens at `stride` samples each.
//   Q = W_Q f(h), K = W_K g(c), V = W_V v(c), with f, g, v bias-free linear maps.
template <typename Real>
class CrossAttentionInjector {
 public:
  CrossAttentionInjector() = default;
  CrossAttentionInjector(int channels, const ConditionEncoderConfig& cfg,
                         nn::ParamStore<Real>& store, const std::string& name, Rng& rng);

  struct Trace {
    nn::AttentionCapture<Real> capture;
    nn::Tensor<Real> attended;  // [B, channels, Lk] after the output projection
  };

  // h [B, C, Lk], context tokens [B, Lk', inner_dim]
  nn::Tensor<Real> operator()(const nn::Tensor<Real>& h, const nn::Tensor<Real>& context,
                              Trace* trace = nullptr, int stride = 1) const;

  // Pre-residual branch output tau(h, c), [B, C, Lk].
  nn::Tensor<Real> branch(const nn::Tensor<Real>& h, const nn::Tensor<Real>& context,
                          Trace* trace = nullptr, int stride = 1) const;

 private:
  int heads_ = 1;
  nn::LayerNorm<Real> norm_h_;
  nn::Linear<Real> f_, g_, v_;
  nn::Linear<Real> wq_, wk_, wv_, wo_;
  nn::LayerNorm<Real> norm_ff_;
  nn::Linear<Real> ff1_, ff2_;
  nn::Conv1d<Real> zero_conv_;
};

// Attention diagnostics for one condition at one denoising step.
struct AttentionScores {
  nn::Shape shape;             // [heads, queries, keys]
  std::vector<float> logits;   // pre-softmax, scaled by 1/sqrt(head_dim)
  std::vector<float> probs;    // softmaxed rows
  nn::Shape summary_shape;     // [channels, L]
  std::vector<float> summary;  // projected attention output per channel
  int t = 0;
  std::string condition_id;
};

// Attention dump file: ASCII header lines terminated by "end\n", then a
// little-endian float32 payload.
//   vgcdm-attention 1
//   kind <logits|probs|summary>
//   shape <d0> <d1> ...
//   t <int>
//   condition <id>
//   end
struct AttentionDump {
  std::string kind;
  nn::Shape shape;
  int t = 0;
  std::string condition_id;
  std::vector<float> values;
};

void write_attention_dump(const std::filesystem::path& path, const AttentionDump& dump);
AttentionDump read_attention_dump(const std::filesystem::path& path);

}  // namespace vgcdm
