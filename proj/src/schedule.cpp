#include "vgcdm/schedule.hpp"

#include <cmath>
#include <numbers>

#include "vgcdm/error.hpp"

namespace vgcdm {

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  fail(ErrorCode::kConfig, "unknown schedule kind '" + name + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<double> betas)
    : kind_(kind), betas_(std::move(betas)) {
  alphas_.resize(betas_.size());
  alpha_bars_.resize(betas_.size());
  double running = 1.0;
  for (std::size_t t = 0; t < betas_.size(); ++t) {
    alphas_[t] = 1.0 - betas_[t];
    running *= alphas_[t];
    alpha_bars_[t] = running;
  }
}

double NoiseSchedule::beta(int t) const { return betas_.at(static_cast<std::size_t>(t)); }
double NoiseSchedule::alpha(int t) const { return alphas_.at(static_cast<std::size_t>(t)); }
double NoiseSchedule::alpha_bar(int t) const {
  return alpha_bars_.at(static_cast<std::size_t>(t));
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  require(steps >= 2, ErrorCode::kInvalidArgument, "schedule needs at least 2 steps");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          ErrorCode::kInvalidArgument, "linear schedule requires 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  const double span = beta_end - beta_start;
  for (int t = 0; t < steps; ++t)
    betas[static_cast<std::size_t>(t)] = beta_start + span * t / (steps - 1);
  betas.back() = beta_end;
  return NoiseSchedule(ScheduleKind::kLinear, std::move(betas));
}

NoiseSchedule NoiseSchedule::cosine(int steps, double offset) {
  require(steps >= 2, ErrorCode::kInvalidArgument, "schedule needs at least 2 steps");
  require(offset > 0.0, ErrorCode::kInvalidArgument, "cosine offset must be positive");
  const auto f = [&](double t) {
    const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> betas(static_cast<std::size_t>(steps));
  double prev = 1.0;  // f(0) / f(0)
  for (int t = 0; t < steps; ++t) {
    const double abar = f(t + 1.0) / f0;
    betas[static_cast<std::size_t>(t)] = std::min(1.0 - abar / prev, kCosineBetaClip);
    prev = abar;
  }
  return NoiseSchedule(ScheduleKind::kCosine, std::move(betas));
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, int steps) {
  return kind == ScheduleKind::kLinear ? linear(steps) : cosine(steps);
}

NoiseSchedule NoiseSchedule::from_betas(ScheduleKind kind, std::vector<double> betas) {
  require(betas.size() >= 2, ErrorCode::kInvalidArgument, "schedule needs at least 2 steps");
  for (double b : betas)
    require(b > 0.0 && b < 1.0, ErrorCode::kInvalidArgument, "betas must lie in (0, 1)");
  return NoiseSchedule(kind, std::move(betas));
}

std::vector<float> q_sample(std::span<const float> x0, int t, std::span<const float> eps,
                            const NoiseSchedule& schedule) {
  require(t >= 0 && t < schedule.steps(), ErrorCode::kIndexOutOfRange,
          "q_sample: t=" + std::to_string(t) + " outside [0, " +
              std::to_string(schedule.steps()) + ")");
  require(x0.size() == eps.size(), ErrorCode::kShapeMismatch,
          "q_sample: noise length differs from signal length");
  const double a = std::sqrt(schedule.alpha_bar(t));
  const double s = std::sqrt(1.0 - schedule.alpha_bar(t));
  std::vector<float> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = static_cast<float>(a * x0[i] + s * eps[i]);
  return out;
}

PosteriorStep posterior_step_params(int t, const NoiseSchedule& schedule) {
  require(t >= 0 && t < schedule.steps(), ErrorCode::kIndexOutOfRange,
          "posterior_step_params: t=" + std::to_string(t) + " out of range");
  const double beta = schedule.beta(t);
  return {1.0 / std::sqrt(schedule.alpha(t)), beta / std::sqrt(1.0 - schedule.alpha_bar(t)),
          beta};
}

}  // namespace vgcdm
