#pragma once

#include <span>
#include <vector>

#include "vgcdm/signal.hpp"

namespace vgcdm {

enum class PsnrIdenticalPolicy { kCap, kError };

struct MetricConfig {
  // MAX in the PSNR ratio is max |y| of the ground-truth sample.
  PsnrIdenticalPolicy psnr_identical = PsnrIdenticalPolicy::kCap;
  double psnr_cap_db = 100.0;
};

double rmse(std::span<const float> truth, std::span<const float> generated);
double psnr(std::span<const float> truth, std::span<const float> generated,
            const MetricConfig& cfg = {});
// Cosine similarity of one-sided FFT magnitude spectra.
double fscs(std::span<const float> truth, std::span<const float> generated);

// Signal overloads additionally require equal sample rates.
double rmse(const Signal& truth, const Signal& generated);
double psnr(const Signal& truth, const Signal& generated, const MetricConfig& cfg = {});
double fscs(const Signal& truth, const Signal& generated);

// |X_k| for k = 0..n/2.
std::vector<double> magnitude_spectrum(std::span<const float> x);

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

Stats batch_stats(std::span<const double> values);

}  // namespace vgcdm
