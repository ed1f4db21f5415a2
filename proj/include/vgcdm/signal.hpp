#pragma once

// Core signal/dataset types and the on-disk dataset directory format:
//
//   <dir>/manifest.json    n_samples, length, sample_rate_hz, label_set[],
//                          labels[], profile_ids[], split[], format_version
//   <dir>/vibration.f32le  little-endian float32, row-major [n_samples, length]
//   <dir>/voltage.f32le    same layout as vibration.f32le

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vgcdm {

inline constexpr int kDefaultLength = 2048;
inline constexpr int kDatasetFormatVersion = 1;

struct Signal {
  std::vector<float> values;
  double sample_rate_hz = 1.0;

  std::size_t size() const { return values.size(); }
};

enum class Split { kTrain, kTest };

struct PairedSample {
  Signal vibration;
  Signal voltage;
  std::string condition_label;
  std::string speed_profile_id;
};

struct DatasetManifest {
  int n_samples = 0;
  int length = kDefaultLength;
  double sample_rate_hz = 1.0;
  std::vector<std::string> label_set;
  std::vector<Split> split;
  int format_version = kDatasetFormatVersion;
};

struct Dataset {
  std::vector<PairedSample> samples;
  DatasetManifest manifest;

  std::vector<std::size_t> indices(Split which) const;
  // Throws if any manifest/sample invariant is violated.
  void validate() const;
};

// Per-sample max-abs scaling into [-1, 1]. All-zero input is returned unchanged.
Signal normalize(const Signal& signal);
void normalize_in_place(std::span<float> values);

// Non-overlapping windows [iL, (i+1)L); the remainder is dropped.
std::vector<Signal> slice_nonoverlapping(std::span<const float> series, int length,
                                         double sample_rate_hz);

// Deterministic split: a seeded shuffle, first round(train_fraction * n) go to train.
std::vector<Split> make_split(int n, double train_fraction, unsigned long long seed);

Dataset read_dataset(const std::filesystem::path& dir);
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Raw little-endian float32 array helpers shared by every binary payload.
void write_f32le(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32le(const std::filesystem::path& path);

std::string to_string(Split split);

}  // namespace vgcdm
