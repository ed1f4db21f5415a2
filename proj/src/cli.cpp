#include "vgcdm/cli.hpp"

#include <cblas.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "CLI11.hpp"
#include "vgcdm/checkpoint.hpp"
#include "vgcdm/config.hpp"
#include "vgcdm/engine.hpp"
#include "vgcdm/error.hpp"
#include "vgcdm/guidance.hpp"
#include "vgcdm/metrics.hpp"
#include "vgcdm/synthbench.hpp"

namespace vgcdm::cli {
namespace fs = std::filesystem;

namespace {

inline constexpr const char* kCheckpointFile = "checkpoint.vgc";
inline constexpr const char* kDivergedSuffix = ".diverged";

// Problems with how the command was invoked rather than with its inputs' contents.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError(what + " not found: '" + path.string() + "'");
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !force)
    throw UsageError("output directory '" + dir.string() + "' exists; pass --force to overwrite");
  fs::create_directories(dir);
}

void prepare_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force)
    throw UsageError("output file '" + file.string() + "' exists; pass --force to overwrite");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out << text;
  require(out.good(), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

// Maps exceptions onto exit codes; every command body runs through here.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergedError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

// Rows of an f32le condition file, each of the model length.
std::vector<std::vector<float>> read_rows(const fs::path& path, int length) {
  require_file(path, "voltage file");
  const auto flat = read_f32le(path);
  require(!flat.empty() && flat.size() % static_cast<std::size_t>(length) == 0, ErrorCode::kShapeMismatch,
          "voltage file '" + path.string() + "' holds " + std::to_string(flat.size()) +
              " values, not a positive multiple of the model length " + std::to_string(length));
  std::vector<std::vector<float>> rows;
  for (std::size_t r = 0; r < flat.size(); r += static_cast<std::size_t>(length))
    rows.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(r),
                      flat.begin() + static_cast<std::ptrdiff_t>(r + static_cast<std::size_t>(length)));
  return rows;
}

Checkpoint open_checkpoint(const fs::path& path) {
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

// A run config given alongside a checkpoint must describe the same network.
void check_against_config(const Checkpoint& ckpt, const std::optional<fs::path>& config) {
  if (!config) return;
  require_file(*config, "config");
  const auto run = load_run_config(*config);
  const auto diff = config_differences(run.model, ckpt.model);
  if (diff.empty()) return;
  std::string names;
  for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
  fail(ErrorCode::kConfig, "checkpoint/config mismatch in model fields: " + names);
}

MetricConfig metrics_from(const std::optional<fs::path>& config) {
  if (!config) return {};
  return load_run_config(*config).metrics;
}

std::vector<std::vector<float>> generate(const Denoiser<float>& model, const NoiseSchedule& schedule,
                                         const std::vector<std::vector<float>>& conditions,
                                         const std::vector<std::uint64_t>& seeds, int batch_size,
                                         std::ostream& out) {
  std::vector<std::vector<float>> generated;
  const bool conditional = !conditions.empty();
  for (std::size_t b0 = 0; b0 < seeds.size(); b0 += static_cast<std::size_t>(batch_size)) {
    const std::size_t b1 = std::min(seeds.size(), b0 + static_cast<std::size_t>(batch_size));
    const std::span<const std::uint64_t> batch_seeds(seeds.data() + b0, b1 - b0);
    std::span<const std::vector<float>> batch_conds;
    if (conditional) batch_conds = {conditions.data() + b0, b1 - b0};
    for (auto& g : sample_batch(model, schedule, batch_conds, batch_seeds)) generated.push_back(std::move(g));
    out << "sampled " << b1 << '/' << seeds.size() << '\n' << std::flush;
  }
  return generated;
}

void write_series(const fs::path& path, std::span<const float> values, double sample_rate_hz) {
  std::string text;
  for (std::size_t i = 0; i < values.size(); ++i)
    text += fmt("%.9g", static_cast<double>(i) / sample_rate_hz) + ' ' + fmt("%.9g", values[i]) + '\n';
  write_text(path, text);
}

void write_spectrum(const fs::path& path, std::span<const float> values, double sample_rate_hz) {
  const auto mag = magnitude_spectrum(values);
  const double df = sample_rate_hz / static_cast<double>(values.size());
  std::string text;
  for (std::size_t k = 0; k < mag.size(); ++k)
    text += fmt("%.9g", static_cast<double>(k) * df) + ' ' + fmt("%.9g", mag[k]) + '\n';
  write_text(path, text);
}

void write_plot_pair(const fs::path& dir, const std::string& stem, std::span<const float> values,
                     double sample_rate_hz) {
  write_series(dir / (stem + "_time.txt"), values, sample_rate_hz);
  write_spectrum(dir / (stem + "_spectrum.txt"), values, sample_rate_hz);
}

}  // namespace

std::string speed_condition_id(double hz) {
  return hz == 0.0 ? "standstill" : "speed_" + fmt("%g", hz) + "hz";
}

void apply_thread_limit() {
  const char* env = std::getenv("VGCDM_NUM_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("VGCDM_NUM_THREADS must be a positive integer");
  openblas_set_num_threads(static_cast<int>(n));
}

// ---- synth ---------------------------------------------------------------------------------

int cmd_synth(const SynthOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::exists(opt.spec)) throw UsageError("spec not found: '" + opt.spec.string() + "'");
    auto spec = load_synth_spec(opt.spec);
    if (opt.seed) spec.seed = *opt.seed;
    const auto dataset = make_dataset(spec);
    prepare_dir(opt.out, opt.force);
    write_dataset(dataset, opt.out);
    std::string labels;
    for (const auto& l : dataset.manifest.label_set) labels += (labels.empty() ? "" : ",") + l;
    out << "N=" << dataset.manifest.n_samples << " labels=" << labels
        << " train=" << dataset.indices(Split::kTrain).size()
        << " test=" << dataset.indices(Split::kTest).size() << '\n';
    return kExitOk;
  });
}

// ---- train ---------------------------------------------------------------------------------

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    require_file(opt.config, "config");
    auto run = load_run_config(opt.config);
    if (opt.seed) run.train.seed = *opt.seed;
    if (opt.no_condition) run.model.condition_enabled = run.train.condition_enabled = false;
    if (opt.epochs) run.train.epochs = *opt.epochs;
    if (opt.out) run.out_dir = *opt.out;
    run.validate();
    if (run.dataset.empty()) throw UsageError("config does not name a dataset");
    require_file(run.dataset / "manifest.json", "dataset");

    std::unique_ptr<TrainingState> state;
    if (opt.resume) {
      const auto ckpt = open_checkpoint(*opt.resume);
      require(!fs::exists(fs::path(*opt.resume) += kDivergedSuffix), ErrorCode::kConfig,
              "checkpoint '" + opt.resume->string() + "' is marked diverged");
      const auto diff = config_differences(run.model, ckpt.model);
      if (!diff.empty()) {
        std::string names;
        for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
        fail(ErrorCode::kConfig, "resume checkpoint/config mismatch in model fields: " + names);
      }
      auto resumed_train = ckpt.train;
      resumed_train.epochs = run.train.epochs;
      require(resumed_train == run.train, ErrorCode::kConfig,
              "resume checkpoint/config mismatch in training settings");
      state = restore_training(ckpt);
    }

    const auto dataset = read_dataset(run.dataset);
    prepare_dir(run.out_dir, opt.force);
    write_text(run.out_dir / "config.json", to_json(run).dump(2) + '\n');
    if (!state) state = std::make_unique<TrainingState>(run.model, run.train);

    const auto ckpt_path = run.out_dir / kCheckpointFile;
    const auto marker = fs::path(ckpt_path) += kDivergedSuffix;
    fs::remove(marker);
    const double fs_hz = dataset.manifest.sample_rate_hz;
    const int remaining = run.train.epochs - state->epochs_done;
    out << "training " << (run.train.condition_enabled ? "conditional" : "unconditional")
        << " model, " << state->model.params().scalar_count() << " parameters, epochs "
        << state->epochs_done << ".." << run.train.epochs << '\n' << std::flush;

    const auto start = std::chrono::steady_clock::now();
    try {
      train_epochs(*state, dataset, run.train, std::max(remaining, 0), [&](const EpochStats& s) {
        out << "epoch " << s.epoch + 1 << '/' << run.train.epochs << " loss "
            << fmt("%.6f", s.mean_loss) << " step " << state->optimizer.steps() << " time "
            << fmt("%.2f", s.seconds) << "s\n"
            << std::flush;
        save_checkpoint(ckpt_path, snapshot(*state, run.train, fs_hz));
      });
    } catch (const DivergedError& e) {
      save_checkpoint(ckpt_path, snapshot(*state, run.train, fs_hz));
      write_text(marker, std::string(e.what()) + "\nepoch " + std::to_string(e.epoch()) + "\nstep " +
                             std::to_string(e.step()) + '\n');
      write_loss_history(run.out_dir / "loss_history.csv", state->history);
      throw;
    }
    const double total_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    save_checkpoint(ckpt_path, snapshot(*state, run.train, fs_hz));
    write_loss_history(run.out_dir / "loss_history.csv", state->history);
    Json epochs = Json::array();
    for (const auto& s : state->history)
      epochs.push_back({{"epoch", s.epoch}, {"mean_loss", s.mean_loss}, {"seconds", s.seconds}});
    write_text(run.out_dir / "train_report.json",
               Json{{"checkpoint", kCheckpointFile},
                    {"global_step", state->optimizer.steps()},
                    {"epochs_done", state->epochs_done},
                    {"wall_clock_s", total_s},
                    {"epochs", epochs}}
                       .dump(2) +
                   '\n');
    out << "wrote " << ckpt_path.string() << '\n';
    return kExitOk;
  });
}

// ---- sample --------------------------------------------------------------------------------

int cmd_sample(const SampleOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!opt.dataset.empty() && !opt.voltage.empty())
      throw UsageError("pass at most one of --dataset and --voltage");
    if (opt.dataset.empty() && opt.voltage.empty() && opt.n == 0)
      throw UsageError("pass --dataset, --voltage or --n");
    if (opt.n < 0 || opt.batch_size < 1) throw UsageError("--n must be >= 0 and --batch-size >= 1");
    const auto ckpt = open_checkpoint(opt.checkpoint);
    check_against_config(ckpt, opt.config);
    const auto model = restore_model(ckpt);
    const int L = ckpt.model.length;
    const bool conditional = ckpt.model.condition_enabled;
    double fs_hz = ckpt.sample_rate_hz;

    // Candidate conditions, their seeds and (for datasets) paired ground truth.
    std::vector<std::vector<float>> pool, truth;
    std::vector<std::uint64_t> pool_keys;
    std::string source = "none";
    if (!opt.dataset.empty()) {
      require_file(opt.dataset / "manifest.json", "dataset");
      const auto ds = read_dataset(opt.dataset);
      require(ds.manifest.length == L, ErrorCode::kShapeMismatch,
              "checkpoint/dataset mismatch in field: length");
      fs_hz = ds.manifest.sample_rate_hz;
      for (auto i : ds.indices(Split::kTest)) {
        pool.push_back(ds.samples[i].voltage.values);
        truth.push_back(ds.samples[i].vibration.values);
        pool_keys.push_back(i);
      }
      require(!pool.empty(), ErrorCode::kEmptyInput, "dataset has no test samples");
      source = "dataset";
    } else if (!opt.voltage.empty()) {
      pool = read_rows(opt.voltage, L);
      for (std::size_t i = 0; i < pool.size(); ++i) pool_keys.push_back(i);
      source = "voltage";
    }
    if (conditional && pool.empty())
      fail(ErrorCode::kConfig, "conditional checkpoint needs --dataset or --voltage");

    const std::size_t n = opt.n > 0 ? static_cast<std::size_t>(opt.n) : pool.size();
    std::vector<std::vector<float>> conditions;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = pool.empty() ? i : i % pool.size();
      const std::uint64_t key = pool.empty() || n > pool.size() ? i : pool_keys[row];
      if (conditional) conditions.push_back(pool[row]);
      seeds.push_back(derive_seed(opt.seed, key));
    }

    prepare_dir(opt.out, opt.force);
    const auto generated = generate(model, ckpt.train.schedule(), conditions, seeds, opt.batch_size, out);
    std::vector<float> flat;
    for (const auto& g : generated) flat.insert(flat.end(), g.begin(), g.end());
    write_f32le(opt.out / "generated.f32le", flat);
    write_text(opt.out / "manifest.json",
               Json{{"n_samples", n},
                    {"length", L},
                    {"sample_rate_hz", fs_hz},
                    {"conditional", conditional},
                    {"source", source},
                    {"seed", opt.seed},
                    {"seeds", seeds}}
                       .dump(2) +
                   '\n');
    if (opt.plot) {
      const auto dir = opt.out / "plot";
      fs::create_directories(dir);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string stem = "sample" + std::to_string(i);
        write_plot_pair(dir, stem + "_generated", generated[i], fs_hz);
        if (!truth.empty()) write_plot_pair(dir, stem + "_real", truth[i % truth.size()], fs_hz);
      }
    }
    out << "wrote " << n << " signals of length " << L << " to " << opt.out.string() << '\n';
    return kExitOk;
  });
}

// ---- eval ----------------------------------------------------------------------------------

int cmd_eval(const EvalCommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.batch_size < 1) throw UsageError("--batch-size must be >= 1");
    const auto ckpt = open_checkpoint(opt.checkpoint);
    check_against_config(ckpt, opt.config);
    require_file(opt.dataset / "manifest.json", "dataset");
    const auto ds = read_dataset(opt.dataset);
    require(ds.manifest.length == ckpt.model.length, ErrorCode::kShapeMismatch,
            "checkpoint/dataset mismatch in field: length");
    require(!ds.indices(Split::kTest).empty(), ErrorCode::kEmptyInput, "dataset has an empty test split");
    prepare_file(opt.out, opt.force);
    const auto model = restore_model(ckpt);
    EvalOptions eo;
    eo.metrics = metrics_from(opt.config);
    eo.seed = opt.seed;
    eo.batch_size = opt.batch_size;
    eo.identity = opt.identity;
    const auto report = evaluate(model, ckpt.train.schedule(), ds, eo);
    report.write_csv(opt.out);
    out << report.to_csv();
    return kExitOk;
  });
}

// ---- inspect-attn --------------------------------------------------------------------------

int cmd_inspect_attn(const InspectOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.voltage.empty() == opt.speeds_hz.empty())
      throw UsageError("pass exactly one of --voltage or --speeds");
    const auto ckpt = open_checkpoint(opt.checkpoint);
    if (!ckpt.model.condition_enabled) fail(ErrorCode::kUnsupported, "no condition branch in checkpoint");
    const int L = ckpt.model.length;
    const double fs_hz = ckpt.sample_rate_hz;

    std::vector<std::vector<float>> conditions;
    std::vector<std::string> ids;
    if (!opt.voltage.empty()) {
      conditions = read_rows(opt.voltage, L);
      for (std::size_t i = 0; i < conditions.size(); ++i) ids.push_back("cond" + std::to_string(i));
    } else {
      const double duration = L / fs_hz;
      for (double hz : opt.speeds_hz) {
        if (!(hz >= 0.0)) throw UsageError("--speeds must be nonnegative");
        const auto profile = hz == 0.0 ? SpeedProfile::standstill(duration) : SpeedProfile::steady(hz, duration);
        conditions.push_back(gen_voltage(profile, fs_hz, L).values);
        ids.push_back(speed_condition_id(hz));
      }
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < conditions.size(); ++i) seeds.push_back(derive_seed(opt.seed, i));

    prepare_dir(opt.out, opt.force);
    const auto model = restore_model(ckpt);
    std::vector<float> final_input;
    sample_batch(model, ckpt.train.schedule(), conditions, seeds, [&](int t, std::span<const float> x) {
      if (t == 0) final_input.assign(x.begin(), x.end());
    });

    for (std::size_t i = 0; i < conditions.size(); ++i) {
      const std::span<const float> x0(final_input.data() + i * static_cast<std::size_t>(L),
                                      static_cast<std::size_t>(L));
      const auto scores = extract_attention_map(model, x0, 0, conditions[i]);
      const auto stem = opt.out / ids[i];
      write_attention_dump(fs::path(stem) += ".logits.attn", {"logits", scores.shape, 0, ids[i], scores.logits});
      write_attention_dump(fs::path(stem) += ".probs.attn", {"probs", scores.shape, 0, ids[i], scores.probs});
      write_attention_dump(fs::path(stem) += ".summary.attn",
                           {"summary", scores.summary_shape, 0, ids[i], scores.summary});
      out << ids[i] << ": heads=" << scores.shape[0] << " queries=" << scores.shape[1]
          << " keys=" << scores.shape[2] << '\n';
    }
    return kExitOk;
  });
}

// ---- schedule ------------------------------------------------------------------------------

int cmd_schedule(const ScheduleOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto schedule = NoiseSchedule::make(parse_schedule_kind(opt.kind), opt.steps);
    std::string text;
    for (int t = 0; t < schedule.steps(); ++t)
      text += std::to_string(t) + ' ' + fmt("%.17g", schedule.alpha_bar(t)) + '\n';
    if (opt.out.empty()) {
      out << text;
    } else {
      prepare_file(opt.out, opt.force);
      write_text(opt.out, text);
    }
    return kExitOk;
  });
}

// ---- dispatch ------------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pulse-voltage-guided conditional diffusion workbench", "vgcdm"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic paired dataset from a spec file");
  s->add_option("--config,--spec", synth.spec, "Synth spec JSON")->required();
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--seed", synth.seed, "Override the spec seed");
  s->add_flag("--force", synth.force, "Overwrite an existing output directory");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train a denoiser from a run config");
  t->add_option("--config", train.config, "Run config JSON")->required();
  t->add_option("--out", train.out, "Output directory (overrides out_dir)");
  t->add_option("--seed", train.seed, "Override the run seed");
  t->add_option("--epochs", train.epochs, "Total epochs (overrides train.epochs)");
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_flag("--no-condition", train.no_condition, "Train the unconditional ablation");
  t->add_flag("--force", train.force, "Overwrite an existing output directory");

  SampleOptions sample;
  auto* p = app.add_subcommand("sample", "Generate signals from a checkpoint");
  p->add_option("--checkpoint", sample.checkpoint, "Checkpoint file")->required();
  p->add_option("--dataset", sample.dataset, "Dataset whose test split supplies conditions");
  p->add_option("--voltage", sample.voltage, "f32le condition file [rows, L]");
  p->add_option("--config", sample.config, "Run config to check against the checkpoint");
  p->add_option("--n", sample.n, "Number of signals (default: one per condition)");
  p->add_option("--seed", sample.seed, "Sampling seed");
  p->add_option("--batch-size", sample.batch_size, "Chains evaluated together");
  p->add_option("--out", sample.out, "Output directory")->required();
  p->add_flag("--plot", sample.plot, "Emit time-series and spectrum plot data");
  p->add_flag("--force", sample.force, "Overwrite an existing output directory");

  EvalCommandOptions eval;
  auto* e = app.add_subcommand("eval", "Score generated signals against the test split");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--dataset", eval.dataset, "Dataset directory")->required();
  e->add_option("--config", eval.config, "Run config (metric settings, consistency check)");
  e->add_option("--out", eval.out, "Output CSV")->required();
  e->add_option("--seed", eval.seed, "Sampling seed");
  e->add_option("--batch-size", eval.batch_size, "Chains evaluated together");
  e->add_flag("--identity", eval.identity, "Score ground truth against itself");
  e->add_flag("--force", eval.force, "Overwrite an existing output file");

  InspectOptions inspect;
  auto* a = app.add_subcommand("inspect-attn", "Dump cross-attention scores at the final sampling step");
  a->add_option("--checkpoint", inspect.checkpoint, "Checkpoint file")->required();
  a->add_option("--voltage", inspect.voltage, "f32le condition file [rows, L]");
  a->add_option("--speeds", inspect.speeds_hz, "Steady speeds in Hz to render as conditions (0: standstill)")
      ->delimiter(',');
  a->add_option("--out", inspect.out, "Output directory")->required();
  a->add_option("--seed", inspect.seed, "Sampling seed");
  a->add_flag("--force", inspect.force, "Overwrite an existing output directory");

  ScheduleOptions sched;
  auto* d = app.add_subcommand("schedule", "Print t and alpha_bar(t) for a noise schedule");
  d->add_option("--kind", sched.kind, "linear or cosine");
  d->add_option("--steps", sched.steps, "Number of diffusion steps");
  d->add_option("--out", sched.out, "Output file (default: stdout)");
  d->add_flag("--force", sched.force, "Overwrite an existing output file");

  std::vector<const char*> argv;
  for (const auto& arg : args) argv.push_back(arg.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const int limited = guarded(err, [&] {
    apply_thread_limit();
    return kExitOk;
  });
  if (limited != kExitOk) return limited;

  if (s->parsed()) return cmd_synth(synth, out, err);
  if (t->parsed()) return cmd_train(train, out, err);
  if (p->parsed()) return cmd_sample(sample, out, err);
  if (e->parsed()) return cmd_eval(eval, out, err);
  if (a->parsed()) return cmd_inspect_attn(inspect, out, err);
  return cmd_schedule(sched, out, err);
}

}  // namespace vgcdm::cli
