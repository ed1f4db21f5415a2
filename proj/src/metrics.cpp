#include "vgcdm/metrics.hpp"

#include <fftw3.h>

#include <cmath>
#include <algorithm>
#include <mutex>

#include "vgcdm/error.hpp"

namespace vgcdm {

namespace {

// FFTW's planner is not re-entrant; execution with a private plan is.
std::mutex g_fftw_planner;

void require_same_length(std::span<const float> a, std::span<const float> b, const char* what) {
  require(a.size() == b.size(), ErrorCode::kShapeMismatch,
          std::string(what) + ": length " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
  require(!a.empty(), ErrorCode::kEmptyInput, std::string(what) + ": empty signals");
}

double mean_squared_error(std::span<const float> y, std::span<const float> yhat) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y[i]) - yhat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(y.size());
}

void require_same_rate(const Signal& a, const Signal& b) {
  require(a.sample_rate_hz == b.sample_rate_hz, ErrorCode::kShapeMismatch,
          "signals have different sample rates");
}

}  // namespace

double rmse(std::span<const float> truth, std::span<const float> generated) {
  require_same_length(truth, generated, "rmse");
  return std::sqrt(mean_squared_error(truth, generated));
}

double psnr(std::span<const float> truth, std::span<const float> generated,
            const MetricConfig& cfg) {
  require_same_length(truth, generated, "psnr");
  double peak = 0.0;
  for (float v : truth) peak = std::max(peak, std::abs(static_cast<double>(v)));
  require(peak > 0.0, ErrorCode::kUndefinedMetric, "psnr: ground truth is all zero (MAX = 0)");
  const double mse = mean_squared_error(truth, generated);
  if (mse == 0.0) {
    require(cfg.psnr_identical == PsnrIdenticalPolicy::kCap, ErrorCode::kUndefinedMetric,
            "psnr: identical signals have unbounded PSNR");
    return cfg.psnr_cap_db;
  }
  return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> magnitude_spectrum(std::span<const float> x) {
  require(!x.empty(), ErrorCode::kEmptyInput, "spectrum of an empty signal");
  const int n = static_cast<int>(x.size());
  const int bins = n / 2 + 1;
  double* in = fftw_alloc_real(static_cast<std::size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(bins));
  fftw_plan plan;
  {
    std::lock_guard lock(g_fftw_planner);
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  for (int i = 0; i < n; ++i) in[i] = x[static_cast<std::size_t>(i)];
  fftw_execute(plan);
  std::vector<double> mag(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) mag[static_cast<std::size_t>(k)] = std::hypot(out[k][0], out[k][1]);
  {
    std::lock_guard lock(g_fftw_planner);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return mag;
}

double fscs(std::span<const float> truth, std::span<const float> generated) {
  require_same_length(truth, generated, "fscs");
  const auto a = magnitude_spectrum(truth);
  const auto b = magnitude_spectrum(generated);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  require(na > 0.0 && nb > 0.0, ErrorCode::kUndefinedMetric,
          "fscs: zero-magnitude spectrum (all-zero signal)");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

double rmse(const Signal& truth, const Signal& generated) {
  require_same_rate(truth, generated);
  return rmse(std::span<const float>(truth.values), generated.values);
}

double psnr(const Signal& truth, const Signal& generated, const MetricConfig& cfg) {
  require_same_rate(truth, generated);
  return psnr(std::span<const float>(truth.values), generated.values, cfg);
}

double fscs(const Signal& truth, const Signal& generated) {
  require_same_rate(truth, generated);
  return fscs(std::span<const float>(truth.values), generated.values);
}

Stats batch_stats(std::span<const double> values) {
  require(!values.empty(), ErrorCode::kEmptyInput, "batch_stats of an empty list");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

}  // namespace vgcdm
