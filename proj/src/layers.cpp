#include "vgcdm/layers.hpp"

#include <cmath>
#include <numeric>

#include "vgcdm/error.hpp"

namespace vgcdm::nn {

template <typename Real>
Tensor<Real> ParamStore<Real>::add(const std::string& name, const Shape& shape, Init init,
                                   Rng& rng) {
  for (const auto& p : params_)
    require(p.name != name, ErrorCode::kConfig, "duplicate parameter name " + name);
  std::vector<Real> values(shape_numel(shape), Real(0));
  switch (init) {
    case Init::kZero:
      break;
    case Init::kOne:
      std::fill(values.begin(), values.end(), Real(1));
      break;
    case Init::kFanInUniform: {
      const double fan_in = static_cast<double>(values.size()) / shape.at(0);
      const double bound = 1.0 / std::sqrt(fan_in);
      for (auto& v : values) v = static_cast<Real>(rng.uniform(-bound, bound));
      break;
    }
  }
  auto t = Tensor<Real>::parameter(shape, std::move(values));
  params_.push_back({name, t});
  return t;
}

template <typename Real>
std::size_t ParamStore<Real>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename Real>
Linear<Real> Linear<Real>::make(ParamStore<Real>& store, const std::string& name, int in, int out,
                                bool with_bias, Rng& rng) {
  Linear l;
  l.weight = store.add(name + ".weight", {out, in}, Init::kFanInUniform, rng);
  if (with_bias) {
    // Bias bound follows the weight fan-in.
    Tensor<Real> b = store.add(name + ".bias", {out}, Init::kZero, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : b.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
    l.bias = b;
  }
  return l;
}

template <typename Real>
Conv1d<Real> Conv1d<Real>::make(ParamStore<Real>& store, const std::string& name, int in, int out,
                                int kernel, int stride, Rng& rng, Init init) {
  Conv1d c;
  c.stride = stride;
  c.padding = kernel / 2;
  c.weight = store.add(name + ".weight", {out, in, kernel}, init, rng);
  Tensor<Real> b = store.add(name + ".bias", {out}, Init::kZero, rng);
  if (init == Init::kFanInUniform) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    for (auto& v : b.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  }
  c.bias = b;
  return c;
}

template <typename Real>
GroupNorm<Real> GroupNorm<Real>::make(ParamStore<Real>& store, const std::string& name,
                                      int channels, int max_groups, Rng& rng) {
  GroupNorm g;
  g.groups = std::gcd(channels, max_groups);
  g.gamma = store.add(name + ".gamma", {channels}, Init::kOne, rng);
  g.beta = store.add(name + ".beta", {channels}, Init::kZero, rng);
  return g;
}

template <typename Real>
LayerNorm<Real> LayerNorm<Real>::make(ParamStore<Real>& store, const std::string& name, int dim,
                                      Rng& rng) {
  LayerNorm n;
  n.gamma = store.add(name + ".gamma", {dim}, Init::kOne, rng);
  n.beta = store.add(name + ".beta", {dim}, Init::kZero, rng);
  return n;
}

template <typename Real>
MultiHeadAttention<Real> MultiHeadAttention<Real>::make(ParamStore<Real>& store,
                                                        const std::string& name, int dim,
                                                        int heads, Rng& rng) {
  require(heads > 0 && dim % heads == 0, ErrorCode::kConfig,
          name + ": dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
              " heads");
  MultiHeadAttention m;
  m.heads = heads;
  m.q = Linear<Real>::make(store, name + ".q", dim, dim, false, rng);
  m.k = Linear<Real>::make(store, name + ".k", dim, dim, false, rng);
  m.v = Linear<Real>::make(store, name + ".v", dim, dim, false, rng);
  m.out = Linear<Real>::make(store, name + ".out", dim, dim, true, rng);
  return m;
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct Conv1d<float>;
template struct Conv1d<double>;
template struct GroupNorm<float>;
template struct GroupNorm<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;

}  // namespace vgcdm::nn
