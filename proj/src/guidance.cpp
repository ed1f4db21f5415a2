#include "vgcdm/guidance.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <fstream>
#include <sstream>

#include "vgcdm/error.hpp"

namespace vgcdm {

using nn::Tensor;

std::vector<double> position_code(int n, int stride, int length, int dim) {
  require(n >= 1 && stride >= 1 && length >= 1 && dim >= 1, ErrorCode::kInvalidArgument,
          "position code needs positive sizes");
  const int pairs = std::min(kPositionFrequencies, dim / 2);
  const double span = std::max(length, 8) / 4.0;
  std::vector<double> out(static_cast<std::size_t>(n) * dim, 0.0);
  for (int i = 0; i < pairs; ++i) {
    const double period = 4.0 * std::pow(span, static_cast<double>(i) / (kPositionFrequencies - 1));
    const double w = 2.0 * std::numbers::pi / period;
    for (int p = 0; p < n; ++p) {
      const double centre = (p + 0.5) * stride - 0.5;
      out[static_cast<std::size_t>(p) * dim + 2 * i] = kPositionAmplitude * std::sin(w * centre);
      out[static_cast<std::size_t>(p) * dim + 2 * i + 1] = kPositionAmplitude * std::cos(w * centre);
    }
  }
  return out;
}

namespace {

// tokens [B, N, D] plus the position code of N tokens `stride` samples apart.
template <typename Real>
Tensor<Real> with_position(const Tensor<Real>& tokens, int stride) {
  const int batch = tokens.dim(0), n = tokens.dim(1), dim = tokens.dim(2);
  const auto code = position_code(n, stride, n * stride, dim);
  std::vector<Real> tiled;
  tiled.reserve(static_cast<std::size_t>(batch) * code.size());
  for (int b = 0; b < batch; ++b)
    for (double v : code) tiled.push_back(static_cast<Real>(v));
  return nn::add(tokens, Tensor<Real>::from(tokens.shape(), std::move(tiled)));
}

}  // namespace

void ConditionEncoderConfig::validate() const {
  require(depth >= 1, ErrorCode::kConfig, "encoder depth must be >= 1");
  require(n_heads >= 1 && inner_dim >= n_heads && inner_dim % n_heads == 0, ErrorCode::kConfig,
          "inner_dim " + std::to_string(inner_dim) + " must be a multiple of n_heads " +
              std::to_string(n_heads));
}

template <typename Real>
ConditionEncoder<Real>::ConditionEncoder(const ConditionEncoderConfig& cfg,
                                         nn::ParamStore<Real>& store, const std::string& name,
                                         Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  for (int d = 0; d < cfg.depth; ++d) {
    const std::string p = name + ".block" + std::to_string(d);
    Block b;
    b.conv = nn::Conv1d<Real>::make(store, p + ".conv", d == 0 ? 1 : cfg.inner_dim, cfg.inner_dim,
                                    3, 1, rng);
    b.norm = nn::LayerNorm<Real>::make(store, p + ".norm", cfg.inner_dim, rng);
    b.attn = nn::MultiHeadAttention<Real>::make(store, p + ".attn", cfg.inner_dim, cfg.n_heads, rng);
    blocks_.push_back(std::move(b));
  }
}

template <typename Real>
Tensor<Real> ConditionEncoder<Real>::operator()(const Tensor<Real>& c) const {
  require(c.rank() == 3 && c.dim(1) == 1, ErrorCode::kShapeMismatch,
          "condition must be [B, 1, L], got " + nn::shape_string(c.shape()));
  Tensor<Real> x = c;
  for (std::size_t d = 0; d < blocks_.size(); ++d) {
    const auto& b = blocks_[d];
    auto tokens = b.norm(nn::transpose12(b.conv(x)));
    if (d == 0) tokens = with_position(tokens, 1);
    tokens = nn::add(tokens, b.attn(tokens, tokens));
    x = nn::transpose12(tokens);
  }
  return x;
}

template <typename Real>
CrossAttentionInjector<Real>::CrossAttentionInjector(int channels,
                                                     const ConditionEncoderConfig& cfg,
                                                     nn::ParamStore<Real>& store,
                                                     const std::string& name, Rng& rng)
    : heads_(cfg.n_heads) {
  cfg.validate();
  const int inner = cfg.inner_dim;
  norm_h_ = nn::LayerNorm<Real>::make(store, name + ".norm_h", channels, rng);
  f_ = nn::Linear<Real>::make(store, name + ".f", channels, inner, false, rng);
  g_ = nn::Linear<Real>::make(store, name + ".g", inner, inner, false, rng);
  v_ = nn::Linear<Real>::make(store, name + ".v", inner, inner, false, rng);
  wq_ = nn::Linear<Real>::make(store, name + ".wq", inner, inner, false, rng);
  wk_ = nn::Linear<Real>::make(store, name + ".wk", inner, inner, false, rng);
  wv_ = nn::Linear<Real>::make(store, name + ".wv", inner, inner, false, rng);
  wo_ = nn::Linear<Real>::make(store, name + ".wo", inner, channels, true, rng);
  norm_ff_ = nn::LayerNorm<Real>::make(store, name + ".norm_ff", channels, rng);
  ff1_ = nn::Linear<Real>::make(store, name + ".ff1", channels, 2 * channels, true, rng);
  ff2_ = nn::Linear<Real>::make(store, name + ".ff2", 2 * channels, channels, true, rng);
  zero_conv_ = nn::Conv1d<Real>::make(store, name + ".zero_conv", channels, channels, 1, 1, rng,
                                      nn::Init::kZero);
}

template <typename Real>
Tensor<Real> CrossAttentionInjector<Real>::branch(const Tensor<Real>& h,
                                                  const Tensor<Real>& context,
                                                  Trace* trace, int stride) const {
  require(h.rank() == 3 && context.rank() == 3 && context.dim(0) == h.dim(0), ErrorCode::kShapeMismatch,
          "inject: latent " + nn::shape_string(h.shape()) + " vs condition " +
              nn::shape_string(context.shape()));
  const auto tokens = with_position(norm_h_(nn::transpose12(h)), stride);
  const auto q = wq_(f_(tokens));
  const auto k = wk_(g_(context));
  const auto v = wv_(v_(context));
  const auto attended = wo_(nn::attention(q, k, v, heads_, trace ? &trace->capture : nullptr));
  const auto ff = nn::add(attended, ff2_(nn::silu(ff1_(norm_ff_(attended)))));
  if (trace) trace->attended = nn::transpose12(attended);
  return zero_conv_(nn::transpose12(ff));
}

template <typename Real>
Tensor<Real> CrossAttentionInjector<Real>::operator()(const Tensor<Real>& h,
                                                      const Tensor<Real>& context,
                                                      Trace* trace, int stride) const {
  return nn::add(h, branch(h, context, trace, stride));
}

template class ConditionEncoder<float>;
template class ConditionEncoder<double>;
template class CrossAttentionInjector<float>;
template class CrossAttentionInjector<double>;

namespace {
constexpr const char* kDumpMagic = "vgcdm-attention 1";
}

void write_attention_dump(const std::filesystem::path& path, const AttentionDump& dump) {
  require(dump.values.size() == nn::shape_numel(dump.shape), ErrorCode::kShapeMismatch,
          "attention dump payload does not match its shape");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << kDumpMagic << '\n' << "kind " << dump.kind << '\n' << "shape";
  for (int d : dump.shape) out << ' ' << d;
  out << '\n' << "t " << dump.t << '\n' << "condition " << dump.condition_id << '\n' << "end\n";
  for (float v : dump.values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    const char bytes[4] = {static_cast<char>(bits & 0xffu), static_cast<char>((bits >> 8) & 0xffu),
                           static_cast<char>((bits >> 16) & 0xffu),
                           static_cast<char>((bits >> 24) & 0xffu)};
    out.write(bytes, 4);
  }
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

AttentionDump read_attention_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  AttentionDump dump;
  std::string line;
  std::getline(in, line);
  require(line == kDumpMagic, ErrorCode::kMalformedManifest, path.string() + ": bad dump header");
  bool done = false;
  while (!done && std::getline(in, line)) {
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "end") {
      done = true;
    } else if (key == "kind") {
      fields >> dump.kind;
    } else if (key == "shape") {
      int d;
      while (fields >> d) dump.shape.push_back(d);
    } else if (key == "t") {
      fields >> dump.t;
    } else if (key == "condition") {
      std::getline(fields >> std::ws, dump.condition_id);
    } else {
      fail(ErrorCode::kMalformedManifest, path.string() + ": unknown header key '" + key + "'");
    }
  }
  require(done, ErrorCode::kMalformedManifest, path.string() + ": header not terminated");
  const std::size_t n = nn::shape_numel(dump.shape);
  std::vector<char> bytes(n * 4);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<std::size_t>(in.gcount()) == bytes.size() && in.peek() == EOF,
          ErrorCode::kPayloadMismatch, path.string() + ": payload size does not match shape");
  dump.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    dump.values[i] = std::bit_cast<float>(bits);
  }
  return dump;
}

}  // namespace vgcdm
