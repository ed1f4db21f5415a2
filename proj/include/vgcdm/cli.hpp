#pragma once

// Subcommands of the vgcdm workbench binary.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, missing
// input file, output exists without --force), 3 diverged training.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace vgcdm::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitDiverged = 3 };

struct SynthOptions {
  std::filesystem::path spec;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

struct TrainOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;  // total epochs, including resumed ones
  std::optional<std::filesystem::path> resume;
  bool no_condition = false;
  bool force = false;
};

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;  // test-split voltages, paired with ground truth
  std::filesystem::path voltage;  // f32le [rows, L]
  std::optional<std::filesystem::path> config;
  int n = 0;  // 0: one per available condition
  std::uint64_t seed = 0;
  int batch_size = 16;
  std::filesystem::path out;
  bool plot = false;
  bool force = false;
};

struct EvalCommandOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;  // CSV file
  std::uint64_t seed = 0;
  int batch_size = 16;
  bool identity = false;
  bool force = false;
};

struct InspectOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path voltage;   // f32le [rows, L]; or
  std::vector<double> speeds_hz;   // steady pulse trains rendered at these speeds (0: standstill)
  std::filesystem::path out;
  std::uint64_t seed = 0;
  bool force = false;
};

struct ScheduleOptions {
  std::string kind = "linear";
  int steps = 1000;
  std::filesystem::path out;
  bool force = false;
};

int cmd_synth(const SynthOptions& opt, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);
int cmd_sample(const SampleOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalCommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_inspect_attn(const InspectOptions& opt, std::ostream& out, std::ostream& err);
int cmd_schedule(const ScheduleOptions& opt, std::ostream& out, std::ostream& err);

// Parses argv (argv[0] is the program name) and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Applies VGCDM_NUM_THREADS, if set, to the BLAS thread pool.
void apply_thread_limit();

// Condition id used for a rendered steady-speed condition, e.g. "standstill", "speed_19hz".
std::string speed_condition_id(double hz);

}  // namespace vgcdm::cli
