#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff. Each op result
// keeps shared ownership of its inputs plus a closure that pushes its gradient
// back to them; backward() walks that graph in reverse topological order.
//
// Instantiated for float (training/inference) and double (gradient checks).

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vgcdm::nn {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  Real* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad.data();
  }
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor from(const Shape& shape, std::vector<Real> values);
  static Tensor parameter(const Shape& shape, std::vector<Real> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }

  const std::shared_ptr<Node<Real>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<Real>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<Real>> node_;
};

// Graph recording is on by default; NoGradGuard disables it in its scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds root.grad with `seed` (same shape as root) and back-propagates.
template <typename Real>
void backward(const Tensor<Real>& root, std::span<const Real> seed);

// Captured attention internals, [batch, heads, queries, keys].
template <typename Real>
struct AttentionCapture {
  Shape shape;
  std::vector<Real> logits;
  std::vector<Real> probs;
};

// ---- ops ---------------------------------------------------------------------------------

// x [B, Cin, L], weight [Cout, Cin, K], bias [Cout] (optional) -> [B, Cout, Lout].
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const std::optional<Tensor<Real>>& bias, int stride, int padding);

// Applies y = x W^T + b over the last axis. weight [Dout, Din].
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const std::optional<Tensor<Real>>& bias);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

// x [B, C, L] + v [B, C] broadcast along L.
template <typename Real>
Tensor<Real> add_channel_bias(const Tensor<Real>& x, const Tensor<Real>& v);

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x);

// x [B, C, L], normalized over (C / groups, L) per group.
template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, int groups, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps);

// Normalized over the last axis.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps);

// [B, A, C] -> [B, C, A]
template <typename Real>
Tensor<Real> transpose12(const Tensor<Real>& x);

// [B, C1, L] ++ [B, C2, L] -> [B, C1 + C2, L]
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

// Nearest-neighbour x2 along the last axis.
template <typename Real>
Tensor<Real> upsample2(const Tensor<Real>& x);

// Mean over non-overlapping windows of `factor` along the last axis.
template <typename Real>
Tensor<Real> avg_pool(const Tensor<Real>& x, int factor);

// Multi-head scaled dot-product attention. q [B, Nq, D], k/v [B, Nk, D].
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                       int heads, AttentionCapture<Real>* capture = nullptr);

// Row-major GEMM C = alpha * op(A) op(B) + beta * C.
template <typename Real>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha, const Real* a, int lda,
          const Real* b, int ldb, Real beta, Real* c, int ldc);

}  // namespace vgcdm::nn
