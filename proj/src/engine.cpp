#include "vgcdm/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vgcdm/error.hpp"
#include "vgcdm/random.hpp"

namespace vgcdm {

using nn::Tensor;

namespace {

constexpr std::uint64_t kModelStream = 0x6d6f64656cull;
constexpr std::uint64_t kEpochStream = 0x65706f6368ull;

double sign(double e) { return (e > 0.0) - (e < 0.0); }

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

// ---- losses --------------------------------------------------------------------------------

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kHuber: return "huber";
    case LossKind::kMse: return "mse";
    case LossKind::kMae: return "mae";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  for (auto k : {LossKind::kHuber, LossKind::kMse, LossKind::kMae})
    if (to_string(k) == name) return k;
  fail(ErrorCode::kConfig, "unknown loss kind '" + name + "' (expected huber, mse or mae)");
}

double huber_point(double e) {
  const double a = std::abs(e);
  return a < kHuberKnee ? 0.5 * e * e : kHuberKnee * (a - 0.5 * kHuberKnee);
}

double mse_point(double e) { return e * e; }

double mae_point(double e) { return std::abs(e); }

double loss_value(LossKind kind, std::span<const double> residuals) {
  require(!residuals.empty(), ErrorCode::kEmptyInput, "loss of an empty residual array");
  double acc = 0.0;
  for (double e : residuals) {
    require(std::isfinite(e), ErrorCode::kNonFinite, "non-finite residual");
    switch (kind) {
      case LossKind::kHuber: acc += huber_point(e); break;
      case LossKind::kMse: acc += mse_point(e); break;
      case LossKind::kMae: acc += mae_point(e); break;
    }
  }
  return acc / static_cast<double>(residuals.size());
}

double huber(std::span<const double> residuals) { return loss_value(LossKind::kHuber, residuals); }

double loss_and_grad(LossKind kind, std::span<const float> prediction,
                     std::span<const float> target, std::span<float> grad) {
  require(prediction.size() == target.size() && grad.size() == prediction.size() &&
              !prediction.empty(),
          ErrorCode::kShapeMismatch, "loss operands differ in size");
  const double inv_n = 1.0 / static_cast<double>(prediction.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double e = static_cast<double>(prediction[i]) - target[i];
    double g = 0.0;
    switch (kind) {
      case LossKind::kHuber:
        acc += huber_point(e);
        g = std::abs(e) < kHuberKnee ? e : kHuberKnee * sign(e);
        break;
      case LossKind::kMse:
        acc += mse_point(e);
        g = 2.0 * e;
        break;
      case LossKind::kMae:
        acc += mae_point(e);
        g = sign(e);
        break;
    }
    grad[i] = static_cast<float>(g * inv_n);
  }
  return acc * inv_n;
}

// ---- optimizer -----------------------------------------------------------------------------

AdamW::AdamW(nn::ParamStore<float>& store, const AdamWConfig& cfg) : store_(&store), cfg_(cfg) {
  for (const auto& p : store.params()) {
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void AdamW::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  auto& params = store_->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    const auto grad = tensor.grad();
    if (grad.empty()) continue;  // parameter unused by this step's graph
    auto value = tensor.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = static_cast<float>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g);
      v[j] = static_cast<float>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g);
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      value[j] = static_cast<float>(value[j] - cfg_.learning_rate * (update + cfg_.weight_decay * value[j]));
    }
  }
}

void AdamW::restore(long long steps, std::vector<std::vector<float>> m,
                    std::vector<std::vector<float>> v) {
  require(m.size() == m_.size() && v.size() == v_.size(), ErrorCode::kCheckpointFormat,
          "optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < m.size(); ++i)
    require(m[i].size() == m_[i].size() && v[i].size() == v_[i].size(),
            ErrorCode::kCheckpointFormat, "optimizer moment size mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---- training ------------------------------------------------------------------------------

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kConfig, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kConfig,
          "learning_rate must be > 0");
  require(weight_decay >= 0.0, ErrorCode::kConfig, "weight_decay must be >= 0");
  require(T >= 2, ErrorCode::kConfig, "T must be >= 2");
  require(grad_clip >= 0.0, ErrorCode::kConfig, "grad_clip must be >= 0");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorCode::kConfig,
          "beta range must satisfy 0 < beta_start <= beta_end < 1");
  require(cosine_offset > 0.0, ErrorCode::kConfig, "cosine_offset must be > 0");
}

NoiseSchedule TrainConfig::schedule() const {
  return schedule_kind == ScheduleKind::kLinear ? NoiseSchedule::linear(T, beta_start, beta_end)
                                                : NoiseSchedule::cosine(T, cosine_offset);
}

std::vector<double> TrainReport::losses() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.mean_loss);
  return out;
}

std::uint64_t model_seed(std::uint64_t seed) { return derive_seed(seed, kModelStream); }

DenoiserConfig resolve_model_config(DenoiserConfig model_cfg, const TrainConfig& train_cfg) {
  model_cfg.condition_enabled = train_cfg.condition_enabled;
  return model_cfg;
}

TrainingState::TrainingState(const DenoiserConfig& model_cfg, const TrainConfig& train_cfg)
    : model(resolve_model_config(model_cfg, train_cfg), model_seed(train_cfg.seed)),
      optimizer(model.params(), train_cfg.optimizer()) {}

namespace {

void clip_gradients(nn::ParamStore<float>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.params())
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const auto scale = static_cast<float>(max_norm / norm);
  for (auto& p : store.params()) {
    if (p.tensor.grad().empty()) continue;
    for (float& g : p.tensor.mutable_grad()) g *= scale;
  }
}

}  // namespace

void train_epochs(TrainingState& state, const Dataset& dataset, const TrainConfig& cfg,
                  int n_epochs, const EpochCallback& on_epoch) {
  cfg.validate();
  auto& model = state.model;
  const int L = model.config().length;
  require(model.config().condition_enabled == cfg.condition_enabled, ErrorCode::kConfig,
          "model condition flag differs from the training config");
  require(dataset.manifest.length == L, ErrorCode::kShapeMismatch,
          "dataset length " + std::to_string(dataset.manifest.length) + " differs from model length " +
              std::to_string(L));
  const auto train_idx = dataset.indices(Split::kTrain);
  require(!train_idx.empty(), ErrorCode::kEmptyInput, "dataset has no training samples");

  const auto schedule = cfg.schedule();
  const std::size_t n = train_idx.size();

  const int first = state.epochs_done;
  for (int e = first; e < first + n_epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(derive_seed(cfg.seed, kEpochStream), static_cast<std::uint64_t>(e)));
    std::vector<std::size_t> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const int B = static_cast<int>(std::min<std::size_t>(cfg.batch_size, n - b0));
      std::vector<float> x_t(static_cast<std::size_t>(B) * L), eps(x_t.size()), cond;
      std::vector<int> steps(B);
      if (cfg.condition_enabled) cond.resize(x_t.size());
      for (int b = 0; b < B; ++b) {
        const auto& sample = dataset.samples[order[b0 + b]];
        steps[b] = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.T)));
        std::span<float> row_eps(eps.data() + static_cast<std::size_t>(b) * L, L);
        for (auto& v : row_eps) v = static_cast<float>(rng.normal());
        const auto noisy = q_sample(sample.vibration.values, steps[b], row_eps, schedule);
        std::copy(noisy.begin(), noisy.end(), x_t.begin() + static_cast<std::ptrdiff_t>(b) * L);
        if (cfg.condition_enabled)
          std::copy(sample.voltage.values.begin(), sample.voltage.values.end(),
                    cond.begin() + static_cast<std::ptrdiff_t>(b) * L);
      }

      const auto input = Tensor<float>::from({B, 1, L}, std::move(x_t));
      Tensor<float> pred;
      if (cfg.condition_enabled) {
        const auto latents = model.encode_condition(Tensor<float>::from({B, 1, L}, std::move(cond)));
        pred = model.forward(input, steps, &latents);
      } else {
        pred = model.forward(input, steps, static_cast<const ConditionLatents<float>*>(nullptr));
      }

      std::vector<float> grad(pred.numel());
      const double loss = loss_and_grad(cfg.loss_kind, pred.data(), eps, grad);
      if (!std::isfinite(loss))
        throw DivergedError(e, state.optimizer.steps(),
                            "non-finite loss at epoch " + std::to_string(e) + ", step " +
                                std::to_string(state.optimizer.steps()));
      nn::backward(pred, std::span<const float>(grad));
      if (cfg.grad_clip > 0.0) clip_gradients(model.params(), cfg.grad_clip);
      state.optimizer.step();
      model.params().zero_grad();
      loss_sum += loss * B;
    }

    EpochStats stats;
    stats.epoch = e;
    stats.mean_loss = loss_sum / static_cast<double>(n);
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.push_back(stats);
    state.epochs_done = e + 1;
    if (on_epoch) on_epoch(stats);
  }
}

TrainResult train(const Dataset& dataset, const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult result;
  result.state = std::make_unique<TrainingState>(model_cfg, cfg);
  train_epochs(*result.state, dataset, cfg, cfg.epochs, on_epoch);
  result.report.epochs = result.state->history;
  result.report.global_step = result.state->optimizer.steps();
  return result;
}

void write_loss_history(const std::filesystem::path& path, std::span<const EpochStats> history) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << "epoch,mean_loss\n";
  for (const auto& e : history) out << e.epoch << ',' << format_real(e.mean_loss) << '\n';
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

// ---- sampling ------------------------------------------------------------------------------

std::vector<std::vector<float>> sample_batch(const Denoiser<float>& model,
                                             const NoiseSchedule& schedule,
                                             std::span<const std::vector<float>> conditions,
                                             std::span<const std::uint64_t> seeds,
                                             const StepCallback& on_step) {
  const int B = static_cast<int>(seeds.size());
  const int L = model.config().length;
  require(B > 0, ErrorCode::kEmptyInput, "no seeds to sample");
  if (model.config().condition_enabled) {
    require(!conditions.empty(), ErrorCode::kConfig, "conditional model requires a condition signal");
    require(static_cast<int>(conditions.size()) == B, ErrorCode::kShapeMismatch,
            "expected one condition per seed");
  } else {
    require(conditions.empty(), ErrorCode::kConfig,
            "condition supplied to a model built without a condition branch");
  }

  nn::NoGradGuard no_grad;
  std::optional<ConditionLatents<float>> latents;
  if (!conditions.empty()) {
    std::vector<float> c(static_cast<std::size_t>(B) * L);
    for (int b = 0; b < B; ++b) {
      require(static_cast<int>(conditions[b].size()) == L, ErrorCode::kShapeMismatch,
              "condition length " + std::to_string(conditions[b].size()) + " differs from model length " +
                  std::to_string(L));
      std::copy(conditions[b].begin(), conditions[b].end(), c.begin() + static_cast<std::ptrdiff_t>(b) * L);
    }
    latents = model.encode_condition(Tensor<float>::from({B, 1, L}, std::move(c)));
  }

  std::vector<Rng> rngs;
  rngs.reserve(B);
  for (auto s : seeds) rngs.emplace_back(s);
  std::vector<float> x(static_cast<std::size_t>(B) * L);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < L; ++i) x[static_cast<std::size_t>(b) * L + i] = static_cast<float>(rngs[b].normal());

  std::vector<int> steps(B);
  for (int t = schedule.steps() - 1; t >= 0; --t) {
    if (on_step) on_step(t, x);
    std::fill(steps.begin(), steps.end(), t);
    const auto eps = model.forward(Tensor<float>::from({B, 1, L}, x), steps,
                                   latents ? &*latents : nullptr);
    const auto p = posterior_step_params(t, schedule);
    const double sigma = std::sqrt(p.variance);
    const auto eps_data = eps.data();
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < L; ++i) {
        const std::size_t j = static_cast<std::size_t>(b) * L + i;
        double next = p.coef_x * (x[j] - p.coef_eps * eps_data[j]);
        if (t > 0) next += sigma * rngs[b].normal();
        x[j] = static_cast<float>(next);
      }
    }
  }

  std::vector<std::vector<float>> out(B);
  for (int b = 0; b < B; ++b) {
    out[b].assign(x.begin() + static_cast<std::ptrdiff_t>(b) * L,
                  x.begin() + static_cast<std::ptrdiff_t>(b + 1) * L);
    for (float v : out[b])
      require(std::isfinite(v), ErrorCode::kNonFinite, "sampler produced a non-finite value");
  }
  return out;
}

Signal sample(const Denoiser<float>& model, const NoiseSchedule& schedule, const Signal* condition,
              std::uint64_t seed, double sample_rate_hz) {
  std::vector<std::vector<float>> conds;
  if (condition) {
    conds.push_back(condition->values);
    sample_rate_hz = condition->sample_rate_hz;
  }
  const std::uint64_t seeds[] = {seed};
  auto out = sample_batch(model, schedule, conds, seeds);
  return {std::move(out.front()), sample_rate_hz};
}

AttentionScores extract_attention_map(const Denoiser<float>& model, std::span<const float> x_t,
                                      int t, std::span<const float> condition) {
  require(model.config().condition_enabled, ErrorCode::kUnsupported,
          "model has no condition branch");
  const int L = model.config().length;
  require(static_cast<int>(x_t.size()) == L && static_cast<int>(condition.size()) == L,
          ErrorCode::kShapeMismatch, "x_t and condition must have the model length");
  nn::NoGradGuard no_grad;
  const auto latents = model.encode_condition(
      Tensor<float>::from({1, 1, L}, std::vector<float>(condition.begin(), condition.end())));
  CrossAttentionInjector<float>::Trace trace;
  const int steps[] = {t};
  model.forward(Tensor<float>::from({1, 1, L}, std::vector<float>(x_t.begin(), x_t.end())), steps,
                &latents, &trace, 0);

  AttentionScores scores;
  const auto& cap = trace.capture;
  scores.shape = {cap.shape[1], cap.shape[2], cap.shape[3]};
  scores.logits = cap.logits;
  scores.probs = cap.probs;
  scores.summary_shape = {trace.attended.dim(1), trace.attended.dim(2)};
  scores.summary.assign(trace.attended.data().begin(), trace.attended.data().end());
  scores.t = t;
  return scores;
}

// ---- evaluation ----------------------------------------------------------------------------

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.label << ',' << format_real(r.rmse.mean) << ',' << format_real(r.rmse.std) << ','
       << format_real(r.psnr.mean) << ',' << format_real(r.psnr.std) << ','
       << format_real(r.fscs.mean) << ',' << format_real(r.fscs.std) << '\n';
  return os.str();
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << to_csv();
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

EvalReport score_samples(const Dataset& dataset, std::span<const std::size_t> test,
                         std::span<const std::vector<float>> generated, const MetricConfig& cfg) {
  require(!test.empty(), ErrorCode::kEmptyInput, "empty test set");
  require(test.size() == generated.size(), ErrorCode::kShapeMismatch,
          "one generated signal per test sample expected");
  EvalReport report;
  for (const auto& label : dataset.manifest.label_set) {
    std::vector<double> r, p, f;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto& truth = dataset.samples.at(test[i]);
      if (truth.condition_label != label) continue;
      const std::span<const float> y(truth.vibration.values);
      r.push_back(rmse(y, generated[i]));
      p.push_back(psnr(y, generated[i], cfg));
      f.push_back(fscs(y, generated[i]));
    }
    if (r.empty()) continue;
    report.rows.push_back({label, static_cast<int>(r.size()), batch_stats(r), batch_stats(p), batch_stats(f)});
  }
  return report;
}

EvalReport evaluate(const Denoiser<float>& model, const NoiseSchedule& schedule,
                    const Dataset& dataset, const EvalOptions& options) {
  const auto test = dataset.indices(Split::kTest);
  require(!test.empty(), ErrorCode::kEmptyInput, "dataset has no test samples");
  require(options.batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  std::vector<std::vector<float>> generated;
  generated.reserve(test.size());
  if (options.identity) {
    for (auto i : test) generated.push_back(dataset.samples[i].vibration.values);
    return score_samples(dataset, test, generated, options.metrics);
  }
  const bool conditional = model.config().condition_enabled;
  for (std::size_t b0 = 0; b0 < test.size(); b0 += static_cast<std::size_t>(options.batch_size)) {
    const std::size_t b1 = std::min(test.size(), b0 + static_cast<std::size_t>(options.batch_size));
    std::vector<std::vector<float>> conds;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = b0; i < b1; ++i) {
      if (conditional) conds.push_back(dataset.samples[test[i]].voltage.values);
      seeds.push_back(derive_seed(options.seed, test[i]));
    }
    for (auto& g : sample_batch(model, schedule, conds, seeds)) generated.push_back(std::move(g));
  }
  return score_samples(dataset, test, generated, options.metrics);
}

}  // namespace vgcdm
