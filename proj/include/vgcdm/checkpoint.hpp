#pragma once

// Versioned checkpoint container.
//
//   "VGCDMCK\0"          8-byte magic
//   u32 format_version
//   u64 n, n bytes       JSON config section (model, train, training progress)
//   u32 tensor count
//   per tensor:          u32 name length, name, u32 rank, u64 dims[rank], u64 byte offset
//   u64 payload bytes
//   payload              little-endian float32, tensors back to back
//
// All integers are little-endian. Tensors are the model parameters in
// registration order, followed by the optimizer moments "adam.m/<name>" and
// "adam.v/<name>" when present.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vgcdm/denoiser.hpp"
#include "vgcdm/engine.hpp"

namespace vgcdm {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointTensor {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;

  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  DenoiserConfig model;
  TrainConfig train;
  double sample_rate_hz = 1.0;  // of the training data
  int epochs_done = 0;
  long long global_step = 0;
  std::vector<EpochStats> history;  // per-epoch wall-clock is not persisted
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

Checkpoint snapshot(const TrainingState& state, const TrainConfig& train_cfg,
                    double sample_rate_hz);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Byte-level encoding used by save/load.
std::vector<char> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

// Rebuilds the model; every parameter must be present with a matching shape.
Denoiser<float> restore_model(const Checkpoint& checkpoint);

// Model, optimizer moments and progress, ready for train_epochs.
std::unique_ptr<TrainingState> restore_training(const Checkpoint& checkpoint);

}  // namespace vgcdm
