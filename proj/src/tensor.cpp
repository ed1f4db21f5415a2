#include "vgcdm/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "vgcdm/error.hpp"

namespace vgcdm::nn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

template <typename Real>
NodePtr<Real> make_node(Shape shape, std::vector<Real> value,
                        std::initializer_list<const Tensor<Real>*> inputs) {
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto* t : inputs)
      if (t && t->defined() && t->requires_grad()) node->requires_grad = true;
    if (node->requires_grad)
      for (const auto* t : inputs)
        if (t && t->defined()) node->parents.push_back(t->node());
  }
  return node;
}

template <typename Real>
Node<Real>* grad_target(const Tensor<Real>& t) {
  return (t.defined() && t.requires_grad()) ? t.node().get() : nullptr;
}

void check(bool cond, const std::string& what) { require(cond, ErrorCode::kShapeMismatch, what); }

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                  int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(const Shape& shape) {
  return from(shape, std::vector<Real>(shape_numel(shape), Real(0)));
}

template <typename Real>
Tensor<Real> Tensor<Real>::from(const Shape& shape, std::vector<Real> values) {
  check(values.size() == shape_numel(shape),
        "tensor data size does not match shape " + shape_string(shape));
  auto node = std::make_shared<Node<Real>>();
  node->shape = shape;
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::parameter(const Shape& shape, std::vector<Real> values) {
  Tensor t = from(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename Real>
void backward(const Tensor<Real>& root, std::span<const Real> seed) {
  check(seed.size() == root.numel(), "backward seed size mismatch");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> visited;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Real* g = root.node()->grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn();
  }
}

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const std::optional<Tensor<Real>>& bias, int stride, int padding) {
  check(x.rank() == 3 && weight.rank() == 3, "conv1d expects [B, C, L] input and [O, C, K] weight");
  const int B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
  const int Co = weight.dim(0), K = weight.dim(2);
  check(weight.dim(1) == Ci, "conv1d: input has " + std::to_string(Ci) +
                                 " channels, weight expects " + std::to_string(weight.dim(1)));
  check(!bias || (bias->rank() == 1 && bias->dim(0) == Co), "conv1d: bias shape");
  check(stride >= 1 && padding >= 0, "conv1d: bad stride/padding");
  const int Lout = (L + 2 * padding - K) / stride + 1;
  check(Lout > 0, "conv1d: output length would be empty");
  const int N = B * Lout;
  const int CK = Ci * K;

  auto col = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(CK) * N, Real(0));
  const Real* xd = x.data().data();
  for (int ci = 0; ci < Ci; ++ci)
    for (int k = 0; k < K; ++k) {
      Real* row = col->data() + static_cast<std::size_t>(ci * K + k) * N;
      for (int b = 0; b < B; ++b) {
        const Real* src = xd + (static_cast<std::size_t>(b) * Ci + ci) * L;
        Real* dst = row + static_cast<std::size_t>(b) * Lout;
        for (int j = 0; j < Lout; ++j) {
          const int s = j * stride + k - padding;
          if (s >= 0 && s < L) dst[j] = src[s];
        }
      }
    }

  std::vector<Real> ym(static_cast<std::size_t>(Co) * N);
  gemm<Real>(false, false, Co, N, CK, Real(1), weight.data().data(), CK, col->data(), N, Real(0),
             ym.data(), N);
  std::vector<Real> out(static_cast<std::size_t>(B) * Co * Lout);
  const Real* bd = bias ? bias->data().data() : nullptr;
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co) {
      const Real* src = ym.data() + static_cast<std::size_t>(co) * N + static_cast<std::size_t>(b) * Lout;
      Real* dst = out.data() + (static_cast<std::size_t>(b) * Co + co) * Lout;
      const Real add = bd ? bd[co] : Real(0);
      for (int j = 0; j < Lout; ++j) dst[j] = src[j] + add;
    }

  const Tensor<Real>* bias_ptr = bias ? &*bias : nullptr;
  auto node = make_node<Real>({B, Co, Lout}, std::move(out), {&x, &weight, bias_ptr});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    Node<Real>* gw = grad_target(weight);
    Node<Real>* gb = bias ? grad_target(*bias) : nullptr;
    Node<Real>* wnode = weight.node().get();
    node->backward_fn = [=]() {
      const Real* dout = self->grad.data();
      std::vector<Real> dym(static_cast<std::size_t>(Co) * N);
      for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
          const Real* src = dout + (static_cast<std::size_t>(b) * Co + co) * Lout;
          std::copy(src, src + Lout,
                    dym.data() + static_cast<std::size_t>(co) * N + static_cast<std::size_t>(b) * Lout);
        }
      if (gw)
        gemm<Real>(false, true, Co, CK, N, Real(1), dym.data(), N, col->data(), N, Real(1),
                   gw->grad_buffer(), CK);
      if (gb) {
        Real* db = gb->grad_buffer();
        for (int co = 0; co < Co; ++co) {
          const Real* r = dym.data() + static_cast<std::size_t>(co) * N;
          Real s = 0;
          for (int j = 0; j < N; ++j) s += r[j];
          db[co] += s;
        }
      }
      if (gx) {
        std::vector<Real> dcol(static_cast<std::size_t>(CK) * N);
        gemm<Real>(true, false, CK, N, Co, Real(1), wnode->value.data(), CK, dym.data(), N,
                   Real(0), dcol.data(), N);
        Real* dx = gx->grad_buffer();
        for (int ci = 0; ci < Ci; ++ci)
          for (int k = 0; k < K; ++k) {
            const Real* row = dcol.data() + static_cast<std::size_t>(ci * K + k) * N;
            for (int b = 0; b < B; ++b) {
              Real* dst = dx + (static_cast<std::size_t>(b) * Ci + ci) * L;
              const Real* src = row + static_cast<std::size_t>(b) * Lout;
              for (int j = 0; j < Lout; ++j) {
                const int s = j * stride + k - padding;
                if (s >= 0 && s < L) dst[s] += src[j];
              }
            }
          }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const std::optional<Tensor<Real>>& bias) {
  check(weight.rank() == 2, "linear: weight must be [out, in]");
  const int Dout = weight.dim(0), Din = weight.dim(1);
  check(x.rank() >= 1 && x.shape().back() == Din,
        "linear: input " + shape_string(x.shape()) + " does not end in " + std::to_string(Din));
  check(!bias || (bias->rank() == 1 && bias->dim(0) == Dout), "linear: bias shape");
  const int M = static_cast<int>(x.numel() / static_cast<std::size_t>(Din));

  std::vector<Real> out(static_cast<std::size_t>(M) * Dout);
  if (bias) {
    const Real* bd = bias->data().data();
    for (int m = 0; m < M; ++m) std::copy(bd, bd + Dout, out.data() + static_cast<std::size_t>(m) * Dout);
  }
  gemm<Real>(false, true, M, Dout, Din, Real(1), x.data().data(), Din, weight.data().data(), Din,
             bias ? Real(1) : Real(0), out.data(), Dout);

  Shape shape = x.shape();
  shape.back() = Dout;
  const Tensor<Real>* bias_ptr = bias ? &*bias : nullptr;
  auto node = make_node<Real>(shape, std::move(out), {&x, &weight, bias_ptr});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    Node<Real>* gw = grad_target(weight);
    Node<Real>* gb = bias ? grad_target(*bias) : nullptr;
    Node<Real>* xnode = x.node().get();
    Node<Real>* wnode = weight.node().get();
    node->backward_fn = [=]() {
      const Real* dy = self->grad.data();
      if (gx)
        gemm<Real>(false, false, M, Din, Dout, Real(1), dy, Dout, wnode->value.data(), Din,
                   Real(1), gx->grad_buffer(), Din);
      if (gw)
        gemm<Real>(true, false, Dout, Din, M, Real(1), dy, Dout, xnode->value.data(), Din,
                   Real(1), gw->grad_buffer(), Din);
      if (gb) {
        Real* db = gb->grad_buffer();
        for (int m = 0; m < M; ++m)
          for (int o = 0; o < Dout; ++o) db[o] += dy[static_cast<std::size_t>(m) * Dout + o];
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  check(a.shape() == b.shape(),
        "add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<Real> out(a.numel());
  const Real* ad = a.data().data();
  const Real* bd = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto node = make_node<Real>(a.shape(), std::move(out), {&a, &b});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* ga = grad_target(a);
    Node<Real>* gb = grad_target(b);
    node->backward_fn = [=]() {
      const std::size_t n = self->value.size();
      for (Node<Real>* g : {ga, gb}) {
        if (!g) continue;
        Real* d = g->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) d[i] += self->grad[i];
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> add_channel_bias(const Tensor<Real>& x, const Tensor<Real>& v) {
  check(x.rank() == 3 && v.rank() == 2 && v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1),
        "add_channel_bias: " + shape_string(x.shape()) + " vs " + shape_string(v.shape()));
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  std::vector<Real> out(x.numel());
  const Real* xd = x.data().data();
  const Real* vd = v.data().data();
  for (int bc = 0; bc < B * C; ++bc)
    for (int j = 0; j < L; ++j)
      out[static_cast<std::size_t>(bc) * L + j] = xd[static_cast<std::size_t>(bc) * L + j] + vd[bc];
  auto node = make_node<Real>(x.shape(), std::move(out), {&x, &v});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    Node<Real>* gv = grad_target(v);
    node->backward_fn = [=]() {
      const Real* dy = self->grad.data();
      if (gx) {
        Real* d = gx->grad_buffer();
        for (std::size_t i = 0; i < self->value.size(); ++i) d[i] += dy[i];
      }
      if (gv) {
        Real* d = gv->grad_buffer();
        for (int bc = 0; bc < B * C; ++bc) {
          Real s = 0;
          for (int j = 0; j < L; ++j) s += dy[static_cast<std::size_t>(bc) * L + j];
          d[bc] += s;
        }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

namespace {

// exp via Cody-Waite reduction and a degree-6 polynomial, branch-free so that
// elementwise loops vectorize. Relative error stays within a few ulp on the
// clamped range; double keeps std::exp.
inline float fast_exp(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  // Round to nearest via the 1.5 * 2^23 shifter.
  const float n = (x * 1.44269504f + 12582912.0f) - 12582912.0f;
  const float r = (x - n * 0.693359375f) + n * 2.12194440e-4f;
  float p = 1.0f / 720.0f;
  p = p * r + 1.0f / 120.0f;
  p = p * r + 1.0f / 24.0f;
  p = p * r + 1.0f / 6.0f;
  p = p * r + 0.5f;
  p = p * r + 1.0f;
  p = p * r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline double fast_exp(double x) { return std::exp(x); }

constexpr int kLanes = 8;

// Reductions over independent lanes; the fixed combination order keeps results
// deterministic while letting the compiler vectorize.
template <typename Acc, typename Real>
Acc lane_sum(const Real* x, int n) {
  Acc acc[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += static_cast<Acc>(x[i + l]);
  Acc total = 0;
  for (; i < n; ++i) total += static_cast<Acc>(x[i]);
  for (int l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

template <typename Acc, typename Real>
Acc lane_sum_sq_dev(const Real* x, int n, Acc mean) {
  Acc acc[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) {
      const Acc d = static_cast<Acc>(x[i + l]) - mean;
      acc[l] += d * d;
    }
  Acc total = 0;
  for (; i < n; ++i) {
    const Acc d = static_cast<Acc>(x[i]) - mean;
    total += d * d;
  }
  for (int l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

template <typename Acc, typename Real>
Acc lane_dot(const Real* a, const Real* b, int n) {
  Acc acc[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += static_cast<Acc>(a[i + l]) * static_cast<Acc>(b[i + l]);
  Acc total = 0;
  for (; i < n; ++i) total += static_cast<Acc>(a[i]) * static_cast<Acc>(b[i]);
  for (int l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

template <typename Real>
Real lane_max(const Real* x, int n) {
  Real acc[kLanes];
  std::fill(acc, acc + kLanes, x[0]);
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] = acc[l] > x[i + l] ? acc[l] : x[i + l];
  Real m = x[0];
  for (; i < n; ++i) m = m > x[i] ? m : x[i];
  for (int l = 0; l < kLanes; ++l) m = m > acc[l] ? m : acc[l];
  return m;
}

}  // namespace

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x) {
  std::vector<Real> out(x.numel());
  const Real* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] / (Real(1) + fast_exp(-xd[i]));
  auto node = make_node<Real>(x.shape(), std::move(out), {&x});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    Node<Real>* xnode = x.node().get();
    node->backward_fn = [=]() {
      Real* d = gx->grad_buffer();
      const Real* xv = xnode->value.data();
      for (std::size_t i = 0; i < self->value.size(); ++i) {
        const Real s = Real(1) / (Real(1) + fast_exp(-xv[i]));
        d[i] += self->grad[i] * s * (Real(1) + xv[i] * (Real(1) - s));
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

namespace {

// Shared normalization kernel over `rows` independent groups of `count` values.
// With segment == 0 the affine parameters are indexed by position within the
// row (layer norm); otherwise each run of `segment` values shares channel
// first_channel(row) + run index (group norm).
template <typename Real, typename FirstChannel>
Tensor<Real> normalize_rows(const Tensor<Real>& x, int rows, int count, const Tensor<Real>& gamma,
                            const Tensor<Real>& beta, double eps, int segment,
                            FirstChannel first_channel) {
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(rows));
  std::vector<Real> out(x.numel());
  const Real* xd = x.data().data();
  const Real* gd = gamma.data().data();
  const Real* bd = beta.data().data();
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * count;
    const Real* src = xd + base;
    const double mean = lane_sum<double>(src, count) / count;
    const double var = lane_sum_sq_dev<double>(src, count, mean) / count;
    const Real is = static_cast<Real>(1.0 / std::sqrt(var + eps));
    const Real m = static_cast<Real>(mean);
    (*inv_std)[r] = is;
    Real* xh = xhat->data() + base;
    Real* dst = out.data() + base;
    for (int i = 0; i < count; ++i) xh[i] = (src[i] - m) * is;
    if (segment == 0) {
      for (int i = 0; i < count; ++i) dst[i] = xh[i] * gd[i] + bd[i];
    } else {
      const int c0 = first_channel(r);
      for (int k = 0; k < count / segment; ++k) {
        const Real g = gd[c0 + k], b = bd[c0 + k];
        const std::size_t off = static_cast<std::size_t>(k) * segment;
        for (int j = 0; j < segment; ++j) dst[off + j] = xh[off + j] * g + b;
      }
    }
  }
  auto node = make_node<Real>(x.shape(), std::move(out), {&x, &gamma, &beta});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    Node<Real>* gg = grad_target(gamma);
    Node<Real>* gbeta = grad_target(beta);
    Node<Real>* gnode = gamma.node().get();
    node->backward_fn = [=]() {
      const Real* dy_all = self->grad.data();
      const Real* gd2 = gnode->value.data();
      Real* dgamma = gg ? gg->grad_buffer() : nullptr;
      Real* dbeta = gbeta ? gbeta->grad_buffer() : nullptr;
      Real* dx = gx ? gx->grad_buffer() : nullptr;
      std::vector<Real> dxhat(static_cast<std::size_t>(count));
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * count;
        const Real* xh = xhat->data() + base;
        const Real* dy = dy_all + base;
        if (segment == 0) {
          for (int i = 0; i < count; ++i) {
            if (dgamma) dgamma[i] += dy[i] * xh[i];
            if (dbeta) dbeta[i] += dy[i];
            dxhat[i] = dy[i] * gd2[i];
          }
        } else {
          const int c0 = first_channel(r);
          for (int k = 0; k < count / segment; ++k) {
            const std::size_t off = static_cast<std::size_t>(k) * segment;
            if (dgamma) dgamma[c0 + k] += lane_dot<Real>(dy + off, xh + off, segment);
            if (dbeta) dbeta[c0 + k] += lane_sum<Real>(dy + off, segment);
            const Real g = gd2[c0 + k];
            for (int j = 0; j < segment; ++j) dxhat[off + j] = dy[off + j] * g;
          }
        }
        if (dx) {
          const Real is = (*inv_std)[r];
          const Real md = static_cast<Real>(lane_sum<double>(dxhat.data(), count) / count);
          const Real mdx = static_cast<Real>(lane_dot<double>(dxhat.data(), xh, count) / count);
          Real* dxr = dx + base;
          for (int i = 0; i < count; ++i) dxr[i] += is * (dxhat[i] - md - xh[i] * mdx);
        }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

}  // namespace

template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, int groups, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps) {
  check(x.rank() == 3, "group_norm expects [B, C, L]");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  check(groups > 0 && C % groups == 0, "group_norm: channels not divisible by groups");
  check(gamma.numel() == static_cast<std::size_t>(C) && beta.numel() == static_cast<std::size_t>(C),
        "group_norm: affine shape");
  const int per_group = (C / groups) * L;
  return normalize_rows<Real>(x, B * groups, per_group, gamma, beta, eps, L,
                              [=](int r) { return (r % groups) * (C / groups); });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps) {
  const int D = x.shape().back();
  check(gamma.numel() == static_cast<std::size_t>(D) && beta.numel() == static_cast<std::size_t>(D),
        "layer_norm: affine shape");
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(D));
  return normalize_rows<Real>(x, rows, D, gamma, beta, eps, 0, [](int) { return 0; });
}

template <typename Real>
Tensor<Real> transpose12(const Tensor<Real>& x) {
  check(x.rank() == 3, "transpose12 expects rank 3");
  const int B = x.dim(0), A = x.dim(1), C = x.dim(2);
  std::vector<Real> out(x.numel());
  const Real* xd = x.data().data();
  for (int b = 0; b < B; ++b)
    for (int a = 0; a < A; ++a)
      for (int c = 0; c < C; ++c)
        out[(static_cast<std::size_t>(b) * C + c) * A + a] = xd[(static_cast<std::size_t>(b) * A + a) * C + c];
  auto node = make_node<Real>({B, C, A}, std::move(out), {&x});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    node->backward_fn = [=]() {
      Real* d = gx->grad_buffer();
      for (int b = 0; b < B; ++b)
        for (int a = 0; a < A; ++a)
          for (int c = 0; c < C; ++c)
            d[(static_cast<std::size_t>(b) * A + a) * C + c] +=
                self->grad[(static_cast<std::size_t>(b) * C + c) * A + a];
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  check(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
        "concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const int B = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), L = a.dim(2);
  const std::size_t n1 = static_cast<std::size_t>(C1) * L, n2 = static_cast<std::size_t>(C2) * L;
  std::vector<Real> out(static_cast<std::size_t>(B) * (n1 + n2));
  for (int i = 0; i < B; ++i) {
    std::copy_n(a.data().data() + i * n1, n1, out.data() + i * (n1 + n2));
    std::copy_n(b.data().data() + i * n2, n2, out.data() + i * (n1 + n2) + n1);
  }
  auto node = make_node<Real>({B, C1 + C2, L}, std::move(out), {&a, &b});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* ga = grad_target(a);
    Node<Real>* gb = grad_target(b);
    node->backward_fn = [=]() {
      for (int i = 0; i < B; ++i) {
        const Real* src = self->grad.data() + i * (n1 + n2);
        if (ga) {
          Real* d = ga->grad_buffer() + i * n1;
          for (std::size_t j = 0; j < n1; ++j) d[j] += src[j];
        }
        if (gb) {
          Real* d = gb->grad_buffer() + i * n2;
          for (std::size_t j = 0; j < n2; ++j) d[j] += src[n1 + j];
        }
      }
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> upsample2(const Tensor<Real>& x) {
  check(x.rank() == 3, "upsample2 expects [B, C, L]");
  const int rows = x.dim(0) * x.dim(1), L = x.dim(2);
  std::vector<Real> out(x.numel() * 2);
  const Real* xd = x.data().data();
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < L; ++j) {
      const Real v = xd[static_cast<std::size_t>(r) * L + j];
      out[static_cast<std::size_t>(r) * 2 * L + 2 * j] = v;
      out[static_cast<std::size_t>(r) * 2 * L + 2 * j + 1] = v;
    }
  auto node = make_node<Real>({x.dim(0), x.dim(1), 2 * L}, std::move(out), {&x});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    node->backward_fn = [=]() {
      Real* d = gx->grad_buffer();
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < L; ++j)
          d[static_cast<std::size_t>(r) * L + j] +=
              self->grad[static_cast<std::size_t>(r) * 2 * L + 2 * j] +
              self->grad[static_cast<std::size_t>(r) * 2 * L + 2 * j + 1];
    };
  }
  return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> avg_pool(const Tensor<Real>& x, int factor) {
  check(x.rank() == 3 && factor >= 1 && x.dim(2) % factor == 0,
        "avg_pool: length " + std::to_string(x.dim(2)) + " not divisible by " +
            std::to_string(factor));
  if (factor == 1) return x;
  const int rows = x.dim(0) * x.dim(1), L = x.dim(2), Lo = L / factor;
  std::vector<Real> out(static_cast<std::size_t>(rows) * Lo);
  const Real* xd = x.data().data();
  const Real inv = Real(1) / static_cast<Real>(factor);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < Lo; ++j) {
      Real s = 0;
      for (int f = 0; f < factor; ++f) s += xd[static_cast<std::size_t>(r) * L + j * factor + f];
      out[static_cast<std::size_t>(r) * Lo + j] = s * inv;
    }
  auto node = make_node<Real>({x.dim(0), x.dim(1), Lo}, std::move(out), {&x});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gx = grad_target(x);
    node->backward_fn = [=]() {
      Real* d = gx->grad_buffer();
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < Lo; ++j) {
          const Real g = self->grad[static_cast<std::size_t>(r) * Lo + j] * inv;
          for (int f = 0; f < factor; ++f) d[static_cast<std::size_t>(r) * L + j * factor + f] += g;
        }
    };
  }
  return Tensor<Real>(std::move(node));
}

namespace {

// Row-wise softmax of an [rows, cols] block, in place.
template <typename Real>
void softmax_rows(Real* s, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    Real* row = s + static_cast<std::size_t>(i) * cols;
    const Real mx = lane_max(row, cols);
    for (int j = 0; j < cols; ++j) row[j] = fast_exp(row[j] - mx);
    const Real inv = Real(1) / lane_sum<Real>(row, cols);
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
}

}  // namespace

template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       int heads, AttentionCapture<Real>* capture) {
  check(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention expects rank-3 q/k/v");
  const int B = q.dim(0), Nq = q.dim(1), D = q.dim(2), Nk = k.dim(1);
  check(k.dim(0) == B && v.dim(0) == B && k.dim(2) == D && v.dim(2) == D && v.dim(1) == Nk,
        "attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
            shape_string(v.shape()));
  check(heads > 0 && D % heads == 0, "attention: inner dim not divisible by heads");
  const int dh = D / heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

  std::vector<Real> out(static_cast<std::size_t>(B) * Nq * D);
  std::vector<Real> s(static_cast<std::size_t>(Nq) * Nk);
  if (capture) {
    capture->shape = {B, heads, Nq, Nk};
    capture->logits.resize(static_cast<std::size_t>(B) * heads * Nq * Nk);
    capture->probs.resize(capture->logits.size());
  }
  const Real* qd = q.data().data();
  const Real* kd = k.data().data();
  const Real* vd = v.data().data();
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h) {
      const Real* qb = qd + static_cast<std::size_t>(b) * Nq * D + h * dh;
      const Real* kb = kd + static_cast<std::size_t>(b) * Nk * D + h * dh;
      const Real* vb = vd + static_cast<std::size_t>(b) * Nk * D + h * dh;
      gemm<Real>(false, true, Nq, Nk, dh, scale, qb, D, kb, D, Real(0), s.data(), Nk);
      const std::size_t cap_off = (static_cast<std::size_t>(b) * heads + h) * Nq * Nk;
      if (capture) std::copy(s.begin(), s.end(), capture->logits.begin() + cap_off);
      softmax_rows(s.data(), Nq, Nk);
      if (capture) std::copy(s.begin(), s.end(), capture->probs.begin() + cap_off);
      gemm<Real>(false, false, Nq, dh, Nk, Real(1), s.data(), Nk, vb, D, Real(0),
                 out.data() + static_cast<std::size_t>(b) * Nq * D + h * dh, D);
    }

  auto node = make_node<Real>({B, Nq, D}, std::move(out), {&q, &k, &v});
  if (node->requires_grad) {
    Node<Real>* self = node.get();
    Node<Real>* gq = grad_target(q);
    Node<Real>* gk = grad_target(k);
    Node<Real>* gv = grad_target(v);
    Node<Real>* qn = q.node().get();
    Node<Real>* kn = k.node().get();
    Node<Real>* vn = v.node().get();
    node->backward_fn = [=]() {
      // Probabilities are recomputed here so the forward pass keeps no [Nq, Nk] buffers.
      std::vector<Real> p(static_cast<std::size_t>(Nq) * Nk), dp(p.size());
      Real* dq = gq ? gq->grad_buffer() : nullptr;
      Real* dk = gk ? gk->grad_buffer() : nullptr;
      Real* dv = gv ? gv->grad_buffer() : nullptr;
      for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h) {
          const std::size_t qo = static_cast<std::size_t>(b) * Nq * D + h * dh;
          const std::size_t ko = static_cast<std::size_t>(b) * Nk * D + h * dh;
          const Real* qb = qn->value.data() + qo;
          const Real* kb = kn->value.data() + ko;
          const Real* vb = vn->value.data() + ko;
          const Real* dob = self->grad.data() + qo;
          gemm<Real>(false, true, Nq, Nk, dh, scale, qb, D, kb, D, Real(0), p.data(), Nk);
          softmax_rows(p.data(), Nq, Nk);
          if (dv)
            gemm<Real>(true, false, Nk, dh, Nq, Real(1), p.data(), Nk, dob, D, Real(1), dv + ko, D);
          if (!dq && !dk) continue;
          gemm<Real>(false, true, Nq, Nk, dh, Real(1), dob, D, vb, D, Real(0), dp.data(), Nk);
          for (int i = 0; i < Nq; ++i) {
            Real* dpr = dp.data() + static_cast<std::size_t>(i) * Nk;
            const Real* pr = p.data() + static_cast<std::size_t>(i) * Nk;
            Real dot = 0;
            for (int j = 0; j < Nk; ++j) dot += dpr[j] * pr[j];
            for (int j = 0; j < Nk; ++j) dpr[j] = pr[j] * (dpr[j] - dot);
          }
          if (dq)
            gemm<Real>(false, false, Nq, dh, Nk, scale, dp.data(), Nk, kb, D, Real(1), dq + qo, D);
          if (dk)
            gemm<Real>(true, false, Nk, dh, Nq, scale, dp.data(), Nk, qb, D, Real(1), dk + ko, D);
        }
    };
  }
  return Tensor<Real>(std::move(node));
}

#define VGCDM_INSTANTIATE(Real)                                                                  \
  template class Tensor<Real>;                                                                   \
  template void backward<Real>(const Tensor<Real>&, std::span<const Real>);                      \
  template Tensor<Real> conv1d<Real>(const Tensor<Real>&, const Tensor<Real>&,                   \
                                     const std::optional<Tensor<Real>>&, int, int);              \
  template Tensor<Real> linear<Real>(const Tensor<Real>&, const Tensor<Real>&,                   \
                                     const std::optional<Tensor<Real>>&);                        \
  template Tensor<Real> add<Real>(const Tensor<Real>&, const Tensor<Real>&);                     \
  template Tensor<Real> add_channel_bias<Real>(const Tensor<Real>&, const Tensor<Real>&);        \
  template Tensor<Real> silu<Real>(const Tensor<Real>&);                                         \
  template Tensor<Real> group_norm<Real>(const Tensor<Real>&, int, const Tensor<Real>&,          \
                                         const Tensor<Real>&, double);                           \
  template Tensor<Real> layer_norm<Real>(const Tensor<Real>&, const Tensor<Real>&,               \
                                         const Tensor<Real>&, double);                           \
  template Tensor<Real> transpose12<Real>(const Tensor<Real>&);                                  \
  template Tensor<Real> concat_channels<Real>(const Tensor<Real>&, const Tensor<Real>&);         \
  template Tensor<Real> upsample2<Real>(const Tensor<Real>&);                                    \
  template Tensor<Real> avg_pool<Real>(const Tensor<Real>&, int);                                \
  template Tensor<Real> attention<Real>(const Tensor<Real>&, const Tensor<Real>&,                \
                                        const Tensor<Real>&, int, AttentionCapture<Real>*);

VGCDM_INSTANTIATE(float)
VGCDM_INSTANTIATE(double)

#undef VGCDM_INSTANTIATE

}  // namespace vgcdm::nn
