#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vgcdm/error.hpp"
#include "vgcdm/metrics.hpp"

using namespace vgcdm;

namespace {

std::vector<float> tone(int n, double cycles) {
  std::vector<float> v(n);
  for (int i = 0; i < n; ++i) v[i] = static_cast<float>(std::sin(2.0 * std::numbers::pi * cycles * i / n));
  return v;
}

std::vector<float> rotate(const std::vector<float>& v, std::size_t k) {
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[(i + k) % v.size()] = v[i];
  return out;
}

}  // namespace

TEST_CASE("rmse examples") {
  const std::vector<float> a{0.1f, -0.4f, 0.9f};
  CHECK(rmse(a, a) == 0.0);
  CHECK(rmse(std::vector<float>(16, 0.0f), std::vector<float>(16, 1.0f)) == 1.0);
  CHECK_THROWS_AS(rmse(a, std::vector<float>(2)), Error);
}

TEST_CASE("psnr examples") {
  // MAX = 1, MSE = 0.01.
  std::vector<float> y(100, 0.0f), g(100, 0.0f);
  y[0] = 1.0f;
  g[0] = 1.0f;
  for (int i = 1; i < 100; ++i) g[i] = (i % 2 ? 0.1f : -0.1f);
  const double mse = [&] {
    double s = 0.0;
    for (int i = 0; i < 100; ++i) s += (double(y[i]) - g[i]) * (double(y[i]) - g[i]);
    return s / 100;
  }();
  CHECK(psnr(y, g) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-12));
  // MAX = 1, MSE = 0.02 / 2 = 0.01.
  const std::vector<float> y3{1.0f, 0.0f}, g3{1.0f, static_cast<float>(std::sqrt(0.02))};
  CHECK(psnr(y3, g3) == doctest::Approx(20.0).epsilon(1e-6));

  CHECK(psnr(y, y) == 100.0);
  MetricConfig strict;
  strict.psnr_identical = PsnrIdenticalPolicy::kError;
  CHECK_THROWS_AS(psnr(y, y, strict), Error);
  try {
    psnr(std::vector<float>(4, 0.0f), std::vector<float>(4, 1.0f));
    FAIL("expected undefined-reference error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUndefinedMetric);
  }
}

TEST_CASE("psnr batch mean equals per-pair then average") {
  const std::vector<std::vector<float>> truth{{1.0f, -0.5f, 0.25f}, {0.2f, 0.8f, -0.6f}, {-1.0f, 0.0f, 0.5f}};
  const std::vector<std::vector<float>> gen{{0.9f, -0.4f, 0.2f}, {0.1f, 0.7f, -0.5f}, {-0.8f, 0.1f, 0.6f}};
  std::vector<double> per_pair;
  long double acc = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    per_pair.push_back(psnr(truth[i], gen[i]));
    acc += oracle::psnr(truth[i], gen[i]);
  }
  CHECK(batch_stats(per_pair).mean == doctest::Approx(static_cast<double>(acc / 3)).epsilon(1e-12));
}

TEST_CASE("fscs examples") {
  const int n = 2048;
  const auto a = tone(n, 8);
  CHECK(fscs(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::fabs(fscs(tone(n, 8), tone(n, 64))) <= 1e-9);
  std::mt19937_64 gen(4);
  const auto r = oracle::random_signal(gen, n);
  CHECK(fscs(r, rotate(r, 100)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(fscs(std::vector<float>(8, 0.0f), r), Error);
  CHECK_THROWS_AS(fscs(r, std::vector<float>(n - 1)), Error);
}

TEST_CASE("metrics match brute-force oracles on 100 random pairs") {
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracle::random_signal(gen, 256), b = oracle::random_signal(gen, 256);
    CHECK(std::fabs(rmse(a, b) - static_cast<double>(oracle::rmse(a, b))) <= 1e-9);
    CHECK(std::fabs(psnr(a, b) - static_cast<double>(oracle::psnr(a, b))) <= 1e-9);
    CHECK(std::fabs(fscs(a, b) - static_cast<double>(oracle::fscs(a, b))) <= 1e-9);
  }
}

TEST_CASE("magnitude spectrum is one-sided and matches the DFT") {
  std::mt19937_64 gen(8);
  for (int n : {64, 65}) {
    const auto x = oracle::random_signal(gen, n);
    const auto mag = magnitude_spectrum(x);
    const auto ref = oracle::dft_magnitude(x);
    REQUIRE(mag.size() == static_cast<std::size_t>(n / 2 + 1));
    for (std::size_t k = 0; k < mag.size(); ++k) CHECK(std::fabs(mag[k] - static_cast<double>(ref[k])) <= 1e-9);
  }
}

TEST_CASE("rmse is a metric on random triples") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = oracle::random_signal(gen, 64), b = oracle::random_signal(gen, 64), c = oracle::random_signal(gen, 64);
    CHECK(rmse(a, b) == rmse(b, a));
    CHECK(rmse(a, b) > 0.0);
    CHECK(rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12);
  }
}

TEST_CASE("psnr decreases as added noise grows") {
  std::mt19937_64 gen(6);
  const auto y = oracle::random_signal(gen, 512);
  const auto z = oracle::random_signal(gen, 512);
  double prev = INFINITY;
  for (double sigma : {0.01, 0.05, 0.1, 0.5, 1.0}) {
    std::vector<float> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = static_cast<float>(y[i] + sigma * z[i]);
    const double p = psnr(y, g);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("fscs shift and scale invariance, range") {
  std::mt19937_64 gen(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_signal(gen, 128), b = oracle::random_signal(gen, 128);
    const double base = fscs(a, b);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    CHECK(std::fabs(fscs(rotate(a, 37), b) - base) <= 1e-9);
    CHECK(std::fabs(fscs(a, rotate(b, 5)) - base) <= 1e-9);
    std::vector<float> scaled(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) scaled[i] = b[i] * 4.0f;
    CHECK(std::fabs(fscs(a, scaled) - base) <= 1e-9);
  }
}

TEST_CASE("signal overloads require equal sample rates") {
  const Signal a{{0.1f, 0.2f, -0.3f, 0.4f}, 100.0}, b{{0.1f, 0.2f, -0.3f, 0.4f}, 200.0};
  CHECK_THROWS_AS(fscs(a, b), Error);
  CHECK_THROWS_AS(rmse(a, b), Error);
  CHECK(fscs(a, a) == doctest::Approx(1.0));
}

TEST_CASE("batch_stats") {
  const std::vector<double> ones{1, 1, 1}, two{0, 2};
  CHECK(batch_stats(ones).mean == 1.0);
  CHECK(batch_stats(ones).std == 0.0);
  CHECK(batch_stats(two).mean == 1.0);
  CHECK(batch_stats(two).std == 1.0);
  CHECK_THROWS_AS(batch_stats(std::vector<double>{}), Error);
  std::mt19937_64 gen(11);
  std::normal_distribution<double> d(3.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(97);
    for (auto& x : v) x = d(gen);
    const auto s = batch_stats(v);
    CHECK(std::fabs(s.mean - static_cast<double>(oracle::mean(v))) <= 1e-12);
    CHECK(std::fabs(s.std - static_cast<double>(oracle::population_std(v))) <= 1e-12);
  }
}
