#pragma once

// Forward-process noise schedules.
//
// Index convention: step t runs over 0..T-1 here and corresponds to step t+1 of
// the usual 1..T notation. alpha_bars[t] is the product of alphas[0..t].

#include <span>
#include <string>
#include <vector>

namespace vgcdm {

enum class ScheduleKind { kLinear, kCosine };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;
inline constexpr double kDefaultCosineOffset = 0.008;
inline constexpr double kCosineBetaClip = 0.999;
inline constexpr int kDefaultSteps = 1000;

class NoiseSchedule {
 public:
  int steps() const { return static_cast<int>(betas_.size()); }
  ScheduleKind kind() const { return kind_; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;

  static NoiseSchedule linear(int steps, double beta_start = kDefaultBetaStart,
                              double beta_end = kDefaultBetaEnd);
  static NoiseSchedule cosine(int steps, double offset = kDefaultCosineOffset);
  static NoiseSchedule make(ScheduleKind kind, int steps);
  // Arbitrary betas in (0, 1); `kind` only labels the result.
  static NoiseSchedule from_betas(ScheduleKind kind, std::vector<double> betas);

 private:
  NoiseSchedule(ScheduleKind kind, std::vector<double> betas);

  ScheduleKind kind_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
std::vector<float> q_sample(std::span<const float> x0, int t, std::span<const float> eps,
                            const NoiseSchedule& schedule);

// Epsilon-parameterized reverse step:
//   mean = coef_x * (x_t - coef_eps * eps_hat),  variance = beta_t (fixed).
struct PosteriorStep {
  double coef_x;
  double coef_eps;
  double variance;
};

PosteriorStep posterior_step_params(int t, const NoiseSchedule& schedule);

}  // namespace vgcdm
