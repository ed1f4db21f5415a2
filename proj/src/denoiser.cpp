#include "vgcdm/denoiser.hpp"

#include <cmath>

#include "vgcdm/error.hpp"

namespace vgcdm {

using nn::Tensor;

void DenoiserConfig::validate() const {
  require(levels() >= 1, ErrorCode::kConfig, "channel_multipliers must not be empty");
  for (int m : channel_multipliers)
    require(m >= 1, ErrorCode::kConfig, "channel multipliers must be positive");
  require(base_channels >= 1 && res_blocks_per_level >= 1 && norm_groups >= 1,
          ErrorCode::kConfig, "base_channels, res_blocks_per_level and norm_groups must be >= 1");
  const int factor = 1 << (levels() - 1);
  require(length > 0 && length % factor == 0, ErrorCode::kConfig,
          "length " + std::to_string(length) + " must be divisible by 2^(levels-1) = " +
              std::to_string(factor));
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, ErrorCode::kConfig,
          "time_embed_dim must be even");
  require(n_heads >= 1 && inner_dim % n_heads == 0, ErrorCode::kConfig,
          "inner_dim must be divisible by n_heads");
  if (condition_enabled) encoder_config().validate();
}

std::vector<double> time_embedding(int t, int dim) {
  require(dim > 0 && dim % 2 == 0, ErrorCode::kConfig,
          "time embedding dim must be even, got " + std::to_string(dim));
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

template <typename Real>
typename Denoiser<Real>::ResBlock Denoiser<Real>::make_res(const std::string& name, int in,
                                                           int out, Rng& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm<Real>::make(store_, name + ".norm1", in, cfg_.norm_groups, rng);
  b.conv1 = nn::Conv1d<Real>::make(store_, name + ".conv1", in, out, 3, 1, rng);
  b.time_proj = nn::Linear<Real>::make(store_, name + ".time_proj", cfg_.time_embed_dim, out, true, rng);
  b.norm2 = nn::GroupNorm<Real>::make(store_, name + ".norm2", out, cfg_.norm_groups, rng);
  b.conv2 = nn::Conv1d<Real>::make(store_, name + ".conv2", out, out, 3, 1, rng);
  if (in != out) b.skip = nn::Conv1d<Real>::make(store_, name + ".skip", in, out, 1, 1, rng);
  return b;
}

template <typename Real>
Denoiser<Real>::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int K = cfg_.levels();
  const int C0 = cfg_.channels(0);

  stem_ = nn::Conv1d<Real>::make(store_, "stem", 1, C0, 3, 1, rng);
  time1_ = nn::Linear<Real>::make(store_, "time.fc1", cfg_.time_embed_dim, cfg_.time_embed_dim, true, rng);
  time2_ = nn::Linear<Real>::make(store_, "time.fc2", cfg_.time_embed_dim, cfg_.time_embed_dim, true, rng);

  int ch = C0;
  down_.resize(K);
  for (int k = 0; k < K; ++k) {
    for (int r = 0; r < cfg_.res_blocks_per_level; ++r) {
      down_[k].push_back(make_res("down" + std::to_string(k) + ".res" + std::to_string(r), ch,
                                  cfg_.channels(k), rng));
      ch = cfg_.channels(k);
    }
    if (k + 1 < K)
      downsample_.push_back(
          nn::Conv1d<Real>::make(store_, "down" + std::to_string(k) + ".downsample", ch, ch, 3, 2, rng));
  }

  mid1_ = make_res("mid.res0", ch, ch, rng);
  mid2_ = make_res("mid.res1", ch, ch, rng);

  up_.resize(K);
  upsample_.resize(K);
  for (int k = K - 1; k >= 0; --k) {
    const int c = cfg_.channels(k);
    for (int r = 0; r < cfg_.res_blocks_per_level; ++r)
      up_[k].push_back(make_res("up" + std::to_string(k) + ".res" + std::to_string(r),
                                r == 0 ? 2 * c : c, c, rng));
    if (k > 0)
      upsample_[k] = nn::Conv1d<Real>::make(store_, "up" + std::to_string(k) + ".upsample", c,
                                            cfg_.channels(k - 1), 3, 1, rng);
  }

  out_norm_ = nn::GroupNorm<Real>::make(store_, "out.norm", C0, cfg_.norm_groups, rng);
  out_conv_ = nn::Conv1d<Real>::make(store_, "out.conv", C0, 1, 3, 1, rng);

  if (cfg_.condition_enabled) {
    const auto enc_cfg = cfg_.encoder_config();
    encoder_.emplace(enc_cfg, store_, "cond.encoder", rng);
    for (int s = 0; s <= K; ++s) {
      const int c = cfg_.channels(std::min(s, K - 1));
      const std::string name = s < K ? "cond.inject" + std::to_string(s) : "cond.inject_mid";
      injectors_.emplace_back(c, enc_cfg, store_, name, rng);
    }
  }
}

template <typename Real>
int Denoiser<Real>::site_length(int site) const {
  const int K = cfg_.levels();
  require(site >= 0 && site <= K, ErrorCode::kIndexOutOfRange, "no injection site " + std::to_string(site));
  return cfg_.length >> std::min(site, K - 1);
}

template <typename Real>
ConditionLatents<Real> Denoiser<Real>::encode_condition(const Tensor<Real>& c) const {
  require(cfg_.condition_enabled, ErrorCode::kConfig,
          "condition supplied to a model built without a condition branch");
  require(c.rank() == 3 && c.dim(1) == 1 && c.dim(2) == cfg_.length, ErrorCode::kShapeMismatch,
          "condition must be [B, 1, " + std::to_string(cfg_.length) + "], got " +
              nn::shape_string(c.shape()));
  const auto latent = (*encoder_)(c);
  ConditionLatents<Real> out;
  const int K = cfg_.levels();
  for (int s = 0; s <= K; ++s)
    out.sites.push_back(nn::transpose12(nn::avg_pool(latent, 1 << std::min(s, K - 1))));
  return out;
}

template <typename Real>
Tensor<Real> Denoiser<Real>::run_res(const ResBlock& b, const Tensor<Real>& x,
                                     const Tensor<Real>& temb_act) const {
  auto h = b.conv1(nn::silu(b.norm1(x)));
  h = nn::add_channel_bias(h, b.time_proj(temb_act));
  h = b.conv2(nn::silu(b.norm2(h)));
  return nn::add(h, b.skip ? (*b.skip)(x) : x);
}

template <typename Real>
Tensor<Real> Denoiser<Real>::inject(int site, const Tensor<Real>& h,
                                    const ConditionLatents<Real>* cond,
                                    typename CrossAttentionInjector<Real>::Trace* trace,
                                    int trace_site) const {
  if (!cond) return h;
  return injectors_[site](h, cond->sites.at(site), site == trace_site ? trace : nullptr,
                          cfg_.length / h.dim(2));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::forward(const Tensor<Real>& x_t, std::span<const int> t,
                                     const ConditionLatents<Real>* condition,
                                     typename CrossAttentionInjector<Real>::Trace* trace,
                                     int trace_site) const {
  require(x_t.rank() == 3 && x_t.dim(1) == 1 && x_t.dim(2) == cfg_.length,
          ErrorCode::kShapeMismatch,
          "x_t must be [B, 1, " + std::to_string(cfg_.length) + "], got " +
              nn::shape_string(x_t.shape()));
  const int B = x_t.dim(0);
  require(static_cast<int>(t.size()) == B, ErrorCode::kShapeMismatch,
          "expected one time step per batch row");
  if (condition) {
    require(cfg_.condition_enabled, ErrorCode::kConfig,
            "condition supplied to a model built without a condition branch");
    require(static_cast<int>(condition->sites.size()) == injection_sites() &&
                condition->sites.front().dim(0) == B,
            ErrorCode::kShapeMismatch, "condition latents do not match the batch");
  }

  const int D = cfg_.time_embed_dim;
  std::vector<Real> emb(static_cast<std::size_t>(B) * D);
  for (int b = 0; b < B; ++b) {
    const auto e = time_embedding(t[b], D);
    for (int i = 0; i < D; ++i) emb[static_cast<std::size_t>(b) * D + i] = static_cast<Real>(e[i]);
  }
  const auto temb =
      nn::silu(time2_(nn::silu(time1_(Tensor<Real>::from({B, D}, std::move(emb))))));

  const int K = cfg_.levels();
  auto h = stem_(x_t);
  std::vector<Tensor<Real>> skips;
  for (int k = 0; k < K; ++k) {
    for (const auto& res : down_[k]) h = run_res(res, h, temb);
    h = inject(k, h, condition, trace, trace_site);
    skips.push_back(h);
    if (k + 1 < K) h = downsample_[k](h);
  }

  h = run_res(mid1_, h, temb);
  h = inject(K, h, condition, trace, trace_site);
  h = run_res(mid2_, h, temb);

  for (int k = K - 1; k >= 0; --k) {
    h = nn::concat_channels(h, skips[k]);
    for (const auto& res : up_[k]) h = run_res(res, h, temb);
    if (k > 0) h = upsample_[k](nn::upsample2(h));
  }
  return out_conv_(nn::silu(out_norm_(h)));
}

template <typename Real>
Tensor<Real> Denoiser<Real>::forward(const Tensor<Real>& x_t, std::span<const int> t,
                                     const std::optional<Tensor<Real>>& c) const {
  if (!c) return forward(x_t, t, static_cast<const ConditionLatents<Real>*>(nullptr));
  const auto latents = encode_condition(*c);
  return forward(x_t, t, &latents);
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace vgcdm
