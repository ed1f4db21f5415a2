#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vgcdm/random.hpp"
#include "vgcdm/tensor.hpp"

namespace vgcdm::nn {

enum class Init { kZero, kOne, kFanInUniform };

template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
};

// Owns every trainable tensor of a model in registration order. Registration
// order is part of the checkpoint contract, so it must be deterministic.
template <typename Real>
class ParamStore {
 public:
  Tensor<Real> add(const std::string& name, const Shape& shape, Init init, Rng& rng);

  const std::vector<NamedParam<Real>>& params() const { return params_; }
  std::vector<NamedParam<Real>>& params() { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedParam<Real>> params_;
};

template <typename Real>
struct Linear {
  Tensor<Real> weight;
  std::optional<Tensor<Real>> bias;

  static Linear make(ParamStore<Real>& store, const std::string& name, int in, int out,
                     bool with_bias, Rng& rng);
  Tensor<Real> operator()(const Tensor<Real>& x) const { return linear(x, weight, bias); }
};

template <typename Real>
struct Conv1d {
  Tensor<Real> weight;
  std::optional<Tensor<Real>> bias;
  int stride = 1;
  int padding = 0;

  static Conv1d make(ParamStore<Real>& store, const std::string& name, int in, int out,
                     int kernel, int stride, Rng& rng, Init init = Init::kFanInUniform);
  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return conv1d(x, weight, bias, stride, padding);
  }
};

template <typename Real>
struct GroupNorm {
  Tensor<Real> gamma, beta;
  int groups = 1;

  static GroupNorm make(ParamStore<Real>& store, const std::string& name, int channels,
                        int max_groups, Rng& rng);
  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return group_norm(x, groups, gamma, beta, 1e-5);
  }
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename Real>
struct LayerNorm {
  Tensor<Real> gamma, beta;

  static LayerNorm make(ParamStore<Real>& store, const std::string& name, int dim, Rng& rng);
  Tensor<Real> operator()(const Tensor<Real>& x) const {
    return layer_norm(x, gamma, beta, kLayerNormEps);
  }
};

// Token-major multi-head attention: queries [B, Nq, D], context [B, Nk, D].
template <typename Real>
struct MultiHeadAttention {
  Linear<Real> q, k, v, out;
  int heads = 1;

  static MultiHeadAttention make(ParamStore<Real>& store, const std::string& name, int dim,
                                 int heads, Rng& rng);
  Tensor<Real> operator()(const Tensor<Real>& x, const Tensor<Real>& context,
                          AttentionCapture<Real>* capture = nullptr) const {
    return out(attention(q(x), k(context), v(context), heads, capture));
  }
};

}  // namespace vgcdm::nn
