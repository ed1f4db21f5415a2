#pragma once

// Training, ancestral sampling and evaluation of the epsilon-predicting denoiser.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vgcdm/denoiser.hpp"
#include "vgcdm/metrics.hpp"
#include "vgcdm/schedule.hpp"
#include "vgcdm/signal.hpp"

namespace vgcdm {

// ---- losses --------------------------------------------------------------------------------

enum class LossKind { kHuber, kMse, kMae };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

inline constexpr double kHuberKnee = 1.0;

// Pointwise terms: huber 0.5 e^2 inside the knee, |e| - 0.5 outside;
// mse e^2; mae |e|.
double huber_point(double e);
double mse_point(double e);
double mae_point(double e);

// Mean of the pointwise term over all residuals.
double huber(std::span<const double> residuals);
double loss_value(LossKind kind, std::span<const double> residuals);

// Mean loss of (prediction - target); writes d loss / d prediction into `grad`.
double loss_and_grad(LossKind kind, std::span<const float> prediction,
                     std::span<const float> target, std::span<float> grad);

// ---- optimizer -----------------------------------------------------------------------------

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
 public:
  AdamW(nn::ParamStore<float>& store, const AdamWConfig& cfg);

  void step();
  long long steps() const { return steps_; }

  // Moment buffers in parameter registration order, for checkpointing.
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }
  void restore(long long steps, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v);

 private:
  nn::ParamStore<float>* store_;
  AdamWConfig cfg_;
  long long steps_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// ---- training ------------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double weight_decay = 0.1;
  LossKind loss_kind = LossKind::kHuber;
  ScheduleKind schedule_kind = ScheduleKind::kLinear;
  int T = kDefaultSteps;
  double beta_start = kDefaultBetaStart;  // linear schedule only
  double beta_end = kDefaultBetaEnd;      // linear schedule only
  double cosine_offset = kDefaultCosineOffset;  // cosine schedule only
  std::uint64_t seed = 0;
  bool condition_enabled = true;
  double grad_clip = 0.0;  // global L2 norm; 0 disables

  void validate() const;
  AdamWConfig optimizer() const { return {learning_rate, weight_decay}; }
  NoiseSchedule schedule() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochStats {
  int epoch = 0;  // zero-based, counted over the whole run including resumes
  double mean_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  long long global_step = 0;

  std::vector<double> losses() const;
};

// Model plus everything needed to continue training bit-for-bit.
struct TrainingState {
  Denoiser<float> model;
  AdamW optimizer;
  int epochs_done = 0;
  std::vector<EpochStats> history;

  TrainingState(const DenoiserConfig& model_cfg, const TrainConfig& train_cfg);
  TrainingState(const TrainingState&) = delete;
  TrainingState& operator=(const TrainingState&) = delete;
};

// Model parameters depend only on (model config, seed); the condition branch
// is registered last, so conditional and unconditional models share backbone
// initial weights.
std::uint64_t model_seed(std::uint64_t seed);

// The model's condition flag is taken from TrainConfig::condition_enabled.
DenoiserConfig resolve_model_config(DenoiserConfig model_cfg, const TrainConfig& train_cfg);

using EpochCallback = std::function<void(const EpochStats&)>;

// Runs `n_epochs` further epochs. Batches and noise for epoch e are drawn from
// a stream derived from (seed, e), so a resumed run matches an uninterrupted one.
// Throws DivergedError on a non-finite loss.
void train_epochs(TrainingState& state, const Dataset& dataset, const TrainConfig& cfg,
                  int n_epochs, const EpochCallback& on_epoch = {});

struct TrainResult {
  std::unique_ptr<TrainingState> state;
  TrainReport report;
};

TrainResult train(const Dataset& dataset, const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

void write_loss_history(const std::filesystem::path& path, std::span<const EpochStats> history);

// ---- sampling ------------------------------------------------------------------------------

// Called before each denoiser evaluation with the current batch x_t [B * L].
using StepCallback = std::function<void(int t, std::span<const float> x_t)>;

// One ancestral chain per seed, evaluated as a batch. `conditions` is either
// empty (unconditional model) or holds one voltage signal per seed. Each chain
// draws x_T and its per-step noise from its own Rng(seeds[i]).
std::vector<std::vector<float>> sample_batch(const Denoiser<float>& model,
                                             const NoiseSchedule& schedule,
                                             std::span<const std::vector<float>> conditions,
                                             std::span<const std::uint64_t> seeds,
                                             const StepCallback& on_step = {});

Signal sample(const Denoiser<float>& model, const NoiseSchedule& schedule, const Signal* condition,
              std::uint64_t seed, double sample_rate_hz = 1.0);

// Attention internals of injection site 0 (full resolution) for batch row 0.
AttentionScores extract_attention_map(const Denoiser<float>& model, std::span<const float> x_t,
                                      int t, std::span<const float> condition);

// ---- evaluation ----------------------------------------------------------------------------

struct EvalRow {
  std::string label;
  int count = 0;
  Stats rmse, psnr, fscs;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  static constexpr const char* kCsvHeader =
      "label,rmse_mean,rmse_std,psnr_mean,psnr_std,fscs_mean,fscs_std";
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Aggregates per-sample metrics of generated[i] against the test samples
// `test[i]`, one row per manifest label that has test samples.
EvalReport score_samples(const Dataset& dataset, std::span<const std::size_t> test,
                         std::span<const std::vector<float>> generated, const MetricConfig& cfg);

struct EvalOptions {
  MetricConfig metrics;
  std::uint64_t seed = 0;
  int batch_size = 64;
  bool identity = false;  // score ground truth against itself
};

// Generates one signal per test sample (from its voltage, if the model is
// conditional) with seed derive_seed(seed, sample index) and scores it.
EvalReport evaluate(const Denoiser<float>& model, const NoiseSchedule& schedule,
                    const Dataset& dataset, const EvalOptions& options = {});

}  // namespace vgcdm
