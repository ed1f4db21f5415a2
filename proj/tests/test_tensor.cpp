#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "vgcdm/error.hpp"
#include "vgcdm/tensor.hpp"

using namespace vgcdm;
using nn::Tensor;
using Fn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

namespace {

std::vector<double> random_values(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

// Compares backward() against central differences of sum(f(inputs) * w).
void check_gradients(const Fn& f, const std::vector<nn::Shape>& shapes, std::uint64_t seed,
                     double tol = 1e-6) {
  std::mt19937_64 gen(seed);
  std::vector<std::vector<double>> values;
  for (const auto& s : shapes) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    values.push_back(random_values(gen, n));
  }
  const auto make = [&] {
    std::vector<Tensor<double>> in;
    for (std::size_t i = 0; i < shapes.size(); ++i) in.push_back(Tensor<double>::parameter(shapes[i], values[i]));
    return in;
  };
  auto inputs = make();
  const auto out = f(inputs);
  const auto w = random_values(gen, out.numel());
  nn::backward(out, std::span<const double>(w));

  const auto objective = [&] {
    nn::NoGradGuard guard;
    const auto y = f(make());
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += y.data()[i] * w[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t a = 0; a < values.size(); ++a) {
    const auto grad = inputs[a].grad();
    REQUIRE(grad.size() == values[a].size());
    for (std::size_t i = 0; i < values[a].size(); ++i) {
      const double keep = values[a][i];
      values[a][i] = keep + h;
      const double up = objective();
      values[a][i] = keep - h;
      const double down = objective();
      values[a][i] = keep;
      const double numeric = (up - down) / (2 * h);
      CHECK(grad[i] == doctest::Approx(numeric).epsilon(tol).scale(1.0));
    }
  }
}

}  // namespace

TEST_CASE("gemm matches a naive triple loop") {
  std::mt19937_64 gen(1);
  const int m = 5, n = 7, k = 3;
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const auto a = random_values(gen, m * k), b = random_values(gen, k * n);
      std::vector<double> c(m * n, 1.0);
      nn::gemm<double>(ta, tb, m, n, k, 2.0, a.data(), ta ? m : k, b.data(), tb ? k : n, 0.5, c.data(), n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int p = 0; p < k; ++p) s += (ta ? a[p * m + i] : a[i * k + p]) * (tb ? b[j * k + p] : b[p * n + j]);
          CHECK(c[i * n + j] == doctest::Approx(2.0 * s + 0.5).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv1d forward against direct summation") {
  std::mt19937_64 gen(2);
  const int B = 2, Cin = 3, Cout = 4, L = 9, K = 3;
  for (int stride : {1, 2}) {
    const auto xv = random_values(gen, B * Cin * L), wv = random_values(gen, Cout * Cin * K),
               bv = random_values(gen, Cout);
    const auto y = nn::conv1d(Tensor<double>::from({B, Cin, L}, xv), Tensor<double>::from({Cout, Cin, K}, wv),
                              std::optional(Tensor<double>::from({Cout}, bv)), stride, 1);
    const int Lout = (L + 2 - K) / stride + 1;
    REQUIRE(y.shape() == nn::Shape{B, Cout, Lout});
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < Cout; ++o)
        for (int j = 0; j < Lout; ++j) {
          double s = bv[o];
          for (int c = 0; c < Cin; ++c)
            for (int k = 0; k < K; ++k) {
              const int pos = j * stride + k - 1;
              if (pos >= 0 && pos < L) s += wv[(o * Cin + c) * K + k] * xv[(b * Cin + c) * L + pos];
            }
          CHECK(y.data()[(b * Cout + o) * Lout + j] == doctest::Approx(s).epsilon(1e-12));
        }
  }
}

TEST_CASE("op gradients match central differences") {
  SUBCASE("conv1d") {
    check_gradients([](const auto& in) { return nn::conv1d(in[0], in[1], std::optional(in[2]), 1, 1); },
                    {{2, 3, 8}, {4, 3, 3}, {4}}, 10);
    check_gradients([](const auto& in) { return nn::conv1d(in[0], in[1], std::optional(in[2]), 2, 1); },
                    {{1, 2, 8}, {3, 2, 3}, {3}}, 11);
  }
  SUBCASE("linear") {
    check_gradients([](const auto& in) { return nn::linear(in[0], in[1], std::optional(in[2])); },
                    {{2, 5, 4}, {3, 4}, {3}}, 12);
  }
  SUBCASE("add and channel bias") {
    check_gradients([](const auto& in) { return nn::add(in[0], in[1]); }, {{2, 3, 4}, {2, 3, 4}}, 13);
    check_gradients([](const auto& in) { return nn::add_channel_bias(in[0], in[1]); }, {{2, 3, 4}, {2, 3}}, 14);
  }
  SUBCASE("silu") {
    check_gradients([](const auto& in) { return nn::silu(in[0]); }, {{3, 7}}, 15);
  }
  SUBCASE("group norm") {
    check_gradients([](const auto& in) { return nn::group_norm(in[0], 2, in[1], in[2], 1e-5); },
                    {{2, 4, 6}, {4}, {4}}, 16, 1e-5);
  }
  SUBCASE("layer norm") {
    check_gradients([](const auto& in) { return nn::layer_norm(in[0], in[1], in[2], 1e-5); },
                    {{2, 3, 5}, {5}, {5}}, 17, 1e-5);
  }
  SUBCASE("shape ops") {
    check_gradients([](const auto& in) { return nn::transpose12(in[0]); }, {{2, 3, 4}}, 18);
    check_gradients([](const auto& in) { return nn::concat_channels(in[0], in[1]); }, {{2, 2, 4}, {2, 3, 4}}, 19);
    check_gradients([](const auto& in) { return nn::upsample2(in[0]); }, {{2, 3, 4}}, 20);
    check_gradients([](const auto& in) { return nn::avg_pool(in[0], 2); }, {{2, 3, 8}}, 21);
  }
  SUBCASE("attention") {
    check_gradients([](const auto& in) { return nn::attention(in[0], in[1], in[2], 2); },
                    {{2, 3, 4}, {2, 5, 4}, {2, 5, 4}}, 22, 1e-5);
  }
}

TEST_CASE("attention on a hand-computed 2x3 single-head case") {
  const std::vector<double> q{1, 0, 0, 2}, k{1, 0, 0, 1, 1, 1}, v{1, 2, 3, 4, 5, 6};
  nn::AttentionCapture<double> cap;
  const auto out = nn::attention(Tensor<double>::from({1, 2, 2}, q), Tensor<double>::from({1, 3, 2}, k),
                                 Tensor<double>::from({1, 3, 2}, v), 1, &cap);
  const double r = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 2; ++i) {
    double logits[3], z = 0.0;
    for (int j = 0; j < 3; ++j) {
      logits[j] = (q[2 * i] * k[2 * j] + q[2 * i + 1] * k[2 * j + 1]) * r;
      z += std::exp(logits[j]);
    }
    for (int d = 0; d < 2; ++d) {
      double o = 0.0;
      for (int j = 0; j < 3; ++j) o += std::exp(logits[j]) / z * v[2 * j + d];
      CHECK(out.data()[2 * i + d] == doctest::Approx(o).epsilon(1e-6));
    }
    for (int j = 0; j < 3; ++j) {
      CHECK(cap.logits[3 * i + j] == doctest::Approx(logits[j]).epsilon(1e-12));
      CHECK(cap.probs[3 * i + j] == doctest::Approx(std::exp(logits[j]) / z).epsilon(1e-6));
    }
  }
  CHECK(cap.shape == nn::Shape{1, 1, 2, 3});
}

TEST_CASE("attention with one repeated key returns the value row") {
  std::mt19937_64 gen(4);
  const auto q = random_values(gen, 5 * 4);
  std::vector<double> k, v;
  for (int j = 0; j < 6; ++j) {
    k.insert(k.end(), {0.3, -1.2, 0.7, 2.0});
    v.insert(v.end(), {1.5, -0.5, 0.25, 4.0});
  }
  const auto out = nn::attention(Tensor<double>::from({1, 5, 4}, q), Tensor<double>::from({1, 6, 4}, k),
                                 Tensor<double>::from({1, 6, 4}, v), 2);
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < 4; ++d) CHECK(out.data()[i * 4 + d] == doctest::Approx(v[d]).epsilon(1e-12));
}

TEST_CASE("attention rows are stochastic and permute with the keys") {
  std::mt19937_64 gen(5);
  const auto q = random_values(gen, 3 * 4), k = random_values(gen, 4 * 4), v = random_values(gen, 4 * 4);
  nn::AttentionCapture<float> cap;
  std::vector<float> qf(q.begin(), q.end()), kf(k.begin(), k.end()), vf(v.begin(), v.end());
  const auto out = nn::attention(Tensor<float>::from({1, 3, 4}, qf), Tensor<float>::from({1, 4, 4}, kf),
                                 Tensor<float>::from({1, 4, 4}, vf), 2, &cap);
  for (std::size_t row = 0; row < cap.probs.size() / 4; ++row) {
    double s = 0.0;
    for (int j = 0; j < 4; ++j) {
      CHECK(cap.probs[row * 4 + j] >= 0.0f);
      s += cap.probs[row * 4 + j];
    }
    CHECK(std::fabs(s - 1.0) <= 1e-5);
  }
  const int perm[4] = {2, 0, 3, 1};
  std::vector<float> kp(16), vp(16);
  for (int j = 0; j < 4; ++j)
    for (int d = 0; d < 4; ++d) {
      kp[j * 4 + d] = kf[perm[j] * 4 + d];
      vp[j * 4 + d] = vf[perm[j] * 4 + d];
    }
  nn::AttentionCapture<float> cap2;
  const auto out2 = nn::attention(Tensor<float>::from({1, 3, 4}, qf), Tensor<float>::from({1, 4, 4}, kp),
                                  Tensor<float>::from({1, 4, 4}, vp), 2, &cap2);
  for (std::size_t row = 0; row < cap.probs.size() / 4; ++row)
    for (int j = 0; j < 4; ++j) CHECK(cap2.probs[row * 4 + j] == doctest::Approx(cap.probs[row * 4 + perm[j]]).epsilon(1e-6));
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out2.data()[i] == doctest::Approx(out.data()[i]).epsilon(1e-5));
}

TEST_CASE("row argmax survives logit scaling and per-row shifts") {
  // A constant third coordinate on every key shifts each query's logits by q_2 / sqrt(d).
  const std::vector<double> q{1, 0, 0.5, 0, 1, -2}, k{0.2, 0.9, 1, 1.4, -0.3, 1, -0.5, 0.1, 1};
  const std::vector<double> q_scaled{3, 0, 0.5, 0, 3, -2}, v(9, 1.0);
  nn::AttentionCapture<double> a, b;
  nn::attention(Tensor<double>::from({1, 2, 3}, q), Tensor<double>::from({1, 3, 3}, k),
                Tensor<double>::from({1, 3, 3}, v), 1, &a);
  nn::attention(Tensor<double>::from({1, 2, 3}, q_scaled), Tensor<double>::from({1, 3, 3}, k),
                Tensor<double>::from({1, 3, 3}, v), 1, &b);
  for (int i = 0; i < 2; ++i) {
    const auto row_a = a.probs.begin() + 3 * i, row_b = b.probs.begin() + 3 * i;
    CHECK(std::max_element(row_a, row_a + 3) - row_a == std::max_element(row_b, row_b + 3) - row_b);
    CHECK(std::fabs(row_a[0] - row_b[0]) > 1e-3);
  }
}

TEST_CASE("shape errors") {
  const auto x = Tensor<float>::zeros({2, 3, 4});
  CHECK_THROWS_AS(nn::add(x, Tensor<float>::zeros({2, 3, 5})), Error);
  CHECK_THROWS_AS(nn::conv1d(x, Tensor<float>::zeros({2, 4, 3}), std::optional<Tensor<float>>{}, 1, 1), Error);
  CHECK_THROWS_AS(nn::attention(Tensor<float>::zeros({1, 2, 4}), Tensor<float>::zeros({1, 3, 6}),
                                Tensor<float>::zeros({1, 3, 6}), 2),
                  Error);
}

TEST_CASE("no-grad mode records no graph") {
  const auto p = Tensor<double>::parameter({3}, {1.0, 2.0, 3.0});
  {
    nn::NoGradGuard guard;
    CHECK_FALSE(nn::grad_enabled());
    const auto y = nn::silu(p);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(nn::grad_enabled());
}

TEST_CASE("float silu tracks the double reference") {
  std::vector<float> xs;
  for (int i = -4000; i <= 4000; ++i) xs.push_back(static_cast<float>(i) * 0.02f);
  const auto y = nn::silu(Tensor<float>::from({1, 1, static_cast<int>(xs.size())}, xs));
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i], ref = x / (1.0 + std::exp(-x));
    worst = std::max(worst, std::fabs(y.data()[i] - ref) / std::max(std::fabs(ref), 1e-30));
  }
  CHECK(worst <= 1e-6);
}
