#pragma once

// JSON encodings of run configurations and synthetic dataset specs.
//
// Parsers reject unknown keys and report the full key path of the first
// offending entry (e.g. "train.lr"). Omitted keys take the defaults of the
// corresponding struct.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "vgcdm/denoiser.hpp"
#include "vgcdm/engine.hpp"
#include "vgcdm/metrics.hpp"
#include "vgcdm/synthbench.hpp"

namespace vgcdm {

using Json = nlohmann::ordered_json;

struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path out_dir = "run";
  DenoiserConfig model;
  TrainConfig train;  // train.seed is the run seed
  MetricConfig metrics;
  int sample_batch_size = 16;

  void validate() const;
};

Json to_json(const DenoiserConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const MetricConfig& cfg);
Json to_json(const RunConfig& cfg);
Json to_json(const SynthSpec& spec);

// `where` prefixes key paths in diagnostics.
DenoiserConfig denoiser_config_from_json(const Json& j, const std::string& where = "model");
TrainConfig train_config_from_json(const Json& j, const std::string& where = "train");
MetricConfig metric_config_from_json(const Json& j, const std::string& where = "metrics");

// Run config layout:
//   { "dataset", "out_dir", "seed",
//     "model":    DenoiserConfig fields,
//     "train":    epochs, batch_size, learning_rate, weight_decay, loss, grad_clip,
//     "schedule": kind, T, beta_start, beta_end, cosine_offset,
//     "metrics":  psnr_identical ("cap" | "error"), psnr_cap_db,
//     "sample":   batch_size }
// Relative dataset/out_dir paths resolve against the config file's directory.
RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Synth spec layout:
//   { "sample_rate_hz", "length", "noise_std", "train_fraction", "seed",
//     "resonance": { "resonance_hz", "decay_s" },
//     "speed_ripple": { "std", "period_s" },
//     "profiles": [ { "id", "segments": [ { "kind", "duration_s",
//                                            "start_hz", "end_hz", "hz" } ] } ],
//     "entries":  [ { "profile", "fault": { "kind", "severity", "order" },
//                     "count", "label" } ] }
// A segment's start_hz defaults to the previous segment's end_hz; "hz" sets
// both ends of a steady segment. A fault's order defaults by kind.
SynthSpec parse_synth_spec(const Json& j);
SynthSpec load_synth_spec(const std::filesystem::path& path);

// Reads a JSON document; a missing file raises ErrorCode::kIo.
Json read_json_file(const std::filesystem::path& path);

// Names of top-level model fields whose values differ, e.g. {"length", "n_heads"}.
std::vector<std::string> config_differences(const DenoiserConfig& a, const DenoiserConfig& b);

}  // namespace vgcdm
