#include "vgcdm/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "vgcdm/error.hpp"

namespace vgcdm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

void normalize_in_place(std::span<float> values) {
  float peak = 0.0f;
  for (float v : values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0f) return;
  for (float& v : values) v /= peak;
}

Signal normalize(const Signal& signal) {
  require(!signal.values.empty(), ErrorCode::kEmptyInput, "normalize: empty signal");
  for (float v : signal.values)
    require(std::isfinite(v), ErrorCode::kNonFinite, "normalize: non-finite sample");
  Signal out = signal;
  normalize_in_place(out.values);
  return out;
}

std::vector<Signal> slice_nonoverlapping(std::span<const float> series, int length,
                                         double sample_rate_hz) {
  require(length > 0, ErrorCode::kInvalidArgument, "slice length must be positive");
  if (series.size() < static_cast<std::size_t>(length))
    fail(ErrorCode::kInsufficientData, "series of " + std::to_string(series.size()) +
                                           " points is shorter than one window of " +
                                           std::to_string(length));
  const std::size_t count = series.size() / static_cast<std::size_t>(length);
  std::vector<Signal> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto window = series.subspan(i * length, length);
    out.push_back(Signal{{window.begin(), window.end()}, sample_rate_hz});
  }
  return out;
}

std::vector<Split> make_split(int n, double train_fraction, unsigned long long seed) {
  require(n >= 0 && train_fraction >= 0.0 && train_fraction <= 1.0, ErrorCode::kInvalidArgument,
          "make_split: bad arguments");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit index draws so the permutation is libstdc++-independent.
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<unsigned long long>(i + 1));
    std::swap(order[i], order[j]);
  }
  const int n_train = static_cast<int>(std::lround(train_fraction * n));
  std::vector<Split> split(n, Split::kTest);
  for (int k = 0; k < n_train; ++k) split[order[k]] = Split::kTrain;
  return split;
}

std::vector<std::size_t> Dataset::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.split.size(); ++i)
    if (manifest.split[i] == which) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  const auto& m = manifest;
  require(m.n_samples == static_cast<int>(samples.size()), ErrorCode::kPayloadMismatch,
          "manifest declares " + std::to_string(m.n_samples) + " samples but dataset holds " +
              std::to_string(samples.size()));
  require(m.split.size() == samples.size(), ErrorCode::kMalformedManifest,
          "split assignment does not cover every sample");
  require(m.length > 0 && m.sample_rate_hz > 0.0, ErrorCode::kMalformedManifest,
          "length and sample_rate_hz must be positive");
  const std::set<std::string> labels(m.label_set.begin(), m.label_set.end());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    for (const Signal* sig : {&s.vibration, &s.voltage}) {
      require(sig->values.size() == static_cast<std::size_t>(m.length), ErrorCode::kShapeMismatch,
              "sample " + std::to_string(i) + " has length " + std::to_string(sig->values.size()));
      require(sig->sample_rate_hz == m.sample_rate_hz, ErrorCode::kShapeMismatch,
              "sample " + std::to_string(i) + " sample rate differs from manifest");
      for (float v : sig->values)
        require(std::isfinite(v), ErrorCode::kNonFinite,
                "sample " + std::to_string(i) + " contains a non-finite value");
    }
    require(labels.count(s.condition_label) == 1, ErrorCode::kMalformedManifest,
            "sample " + std::to_string(i) + " label '" + s.condition_label +
                "' is not in the label set");
  }
}

void write_f32le(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char bytes[4];
      for (int b = 0; b < 4; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
      out.write(bytes, 4);
    }
  }
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<float> read_f32le(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() % 4 == 0, ErrorCode::kPayloadMismatch,
          path.string() + " size is not a multiple of 4 bytes");
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir);
  const auto& m = dataset.manifest;

  json manifest;
  manifest["format_version"] = m.format_version;
  manifest["n_samples"] = m.n_samples;
  manifest["length"] = m.length;
  manifest["sample_rate_hz"] = m.sample_rate_hz;
  manifest["label_set"] = m.label_set;
  json labels = json::array(), profiles = json::array(), split = json::array();
  std::vector<float> vib, volt;
  vib.reserve(static_cast<std::size_t>(m.n_samples) * m.length);
  volt.reserve(vib.capacity());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    labels.push_back(s.condition_label);
    profiles.push_back(s.speed_profile_id);
    split.push_back(to_string(m.split[i]));
    vib.insert(vib.end(), s.vibration.values.begin(), s.vibration.values.end());
    volt.insert(volt.end(), s.voltage.values.begin(), s.voltage.values.end());
  }
  manifest["labels"] = labels;
  manifest["profile_ids"] = profiles;
  manifest["split"] = split;

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  write_f32le(dir / "vibration.f32le", vib);
  write_f32le(dir / "voltage.f32le", volt);
}

Dataset read_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    fail(ErrorCode::kMissingManifest, "no manifest.json in " + dir.string());

  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedManifest, e.what());
  }

  Dataset ds;
  auto& m = ds.manifest;
  std::vector<std::string> labels, profiles, split;
  try {
    m.format_version = manifest.at("format_version").get<int>();
    m.n_samples = manifest.at("n_samples").get<int>();
    m.length = manifest.at("length").get<int>();
    m.sample_rate_hz = manifest.at("sample_rate_hz").get<double>();
    m.label_set = manifest.at("label_set").get<std::vector<std::string>>();
    labels = manifest.at("labels").get<std::vector<std::string>>();
    profiles = manifest.value("profile_ids", std::vector<std::string>(labels.size()));
    split = manifest.at("split").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedManifest, e.what());
  }
  require(m.format_version == kDatasetFormatVersion, ErrorCode::kMalformedManifest,
          "unsupported dataset format_version " + std::to_string(m.format_version));
  require(m.n_samples >= 0 && m.length > 0 && m.sample_rate_hz > 0.0,
          ErrorCode::kMalformedManifest, "manifest has non-positive dimensions");
  const auto n = static_cast<std::size_t>(m.n_samples);
  require(labels.size() == n && profiles.size() == n && split.size() == n,
          ErrorCode::kMalformedManifest, "per-sample manifest arrays must have n_samples entries");

  const auto vib = read_f32le(dir / "vibration.f32le");
  const auto volt = read_f32le(dir / "voltage.f32le");
  const std::size_t expected = n * static_cast<std::size_t>(m.length);
  require(vib.size() == expected && volt.size() == expected, ErrorCode::kPayloadMismatch,
          "manifest declares " + std::to_string(expected) + " floats per payload, found " +
              std::to_string(vib.size()) + " (vibration) and " + std::to_string(volt.size()) +
              " (voltage)");

  m.split.reserve(n);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (split[i] == "train") {
      m.split.push_back(Split::kTrain);
    } else if (split[i] == "test") {
      m.split.push_back(Split::kTest);
    } else {
      fail(ErrorCode::kMalformedManifest, "unknown split tag '" + split[i] + "'");
    }
    const auto begin = static_cast<std::ptrdiff_t>(i * m.length);
    PairedSample s;
    s.vibration = {{vib.begin() + begin, vib.begin() + begin + m.length}, m.sample_rate_hz};
    s.voltage = {{volt.begin() + begin, volt.begin() + begin + m.length}, m.sample_rate_hz};
    s.condition_label = labels[i];
    s.speed_profile_id = profiles[i];
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace vgcdm
