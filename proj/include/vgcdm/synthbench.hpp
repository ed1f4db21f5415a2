#pragma once

// Synthetic paired pulse-voltage / vibration generator.
//
// Shaft speed follows a piecewise-linear frequency profile. The voltage channel
// is a rectangular pulse train with one pulse per revolution. The vibration
// channel sums shaft harmonics, bearing-fault impulse responses locked to the
// shaft phase, and white noise.

#include <cstdint>
#include <string>
#include <vector>

#include "vgcdm/signal.hpp"

namespace vgcdm {

enum class SegmentKind { kStandstill, kAccelerate, kSteady, kDecelerate };

struct ProfileSegment {
  SegmentKind kind = SegmentKind::kSteady;
  double duration_s = 0.0;
  double start_hz = 0.0;
  double end_hz = 0.0;
};

struct SpeedProfile {
  std::string id;
  std::vector<ProfileSegment> segments;

  void validate() const;
  double duration_s() const;

  static SpeedProfile steady(double hz, double duration_s, std::string id = {});
  static SpeedProfile standstill(double duration_s, std::string id = {});
  static SpeedProfile ramp(double start_hz, double end_hz, double duration_s, std::string id = {});
  // standstill -> accelerate -> steady -> decelerate -> standstill
  static SpeedProfile vary_state(double steady_hz, double standstill_s, double ramp_s,
                                 double steady_s, std::string id = {});
};

enum class FaultKind { kNone, kInnerRace, kOuterRace };

inline constexpr double kOuterRaceOrder = 3.5;
inline constexpr double kInnerRaceOrder = 5.4;
inline constexpr double kDefaultNoiseStd = 0.05;
inline constexpr double kDefaultSampleRateHz = 8192.0;
inline constexpr double kPulseDuty = 0.1;

struct FaultSpec {
  FaultKind kind = FaultKind::kNone;
  double severity = 1.0;
  double characteristic_order = kOuterRaceOrder;

  void validate() const;
};

// Resonance parameters of the fault impulse response. Zero means "derive from
// the sample rate" (resonance at fs/5, decay over three resonance periods).
struct ResonanceSpec {
  double resonance_hz = 0.0;
  double decay_s = 0.0;
};

// Slow multiplicative speed wander around the nominal profile: relative
// deviations drawn from N(0, std^2) at knots every period_s, linearly
// interpolated. A zero std leaves the profile exact.
struct SpeedRipple {
  double std = 0.0;
  double period_s = 0.25;

  void validate() const;
};

// Instantaneous shaft frequency and accumulated phase (in revolutions) per
// sample. Past the end of the profile the final frequency is held, unless
// `periodic`, in which case the profile repeats with continuous phase.
struct ShaftTrack {
  std::vector<double> freq_hz;
  std::vector<double> phase_rev;
};

ShaftTrack shaft_track(const SpeedProfile& profile, double sample_rate_hz, std::size_t n,
                       bool periodic = false);

// Scales the frequency by the ripple and re-integrates the phase (trapezoidal).
void apply_speed_ripple(ShaftTrack& track, const SpeedRipple& ripple, double sample_rate_hz,
                        std::uint64_t seed);

Signal gen_voltage(const SpeedProfile& profile, double sample_rate_hz, int length);
Signal gen_vibration(const SpeedProfile& profile, const FaultSpec& fault, double sample_rate_hz,
                     int length, double noise_std, std::uint64_t seed,
                     const ResonanceSpec& resonance = {});

// Unnormalized long-record renderers used by make_dataset.
std::vector<float> render_voltage(const ShaftTrack& track);
std::vector<float> render_vibration(const ShaftTrack& track, const FaultSpec& fault,
                                    double sample_rate_hz, double noise_std, std::uint64_t seed,
                                    const ResonanceSpec& resonance = {});

// Number of pulses (maximal runs of positive samples) in a voltage signal.
int count_pulses(std::span<const float> voltage);

// NC, IF1..IF3, OF1..OF3 for the standard severities; otherwise e.g. "IF@0.45".
std::string default_label(const FaultSpec& fault);

struct DatasetEntry {
  SpeedProfile profile;
  FaultSpec fault;
  int count = 0;
  std::string label;  // empty: default_label(fault)
};

struct SynthSpec {
  std::vector<DatasetEntry> entries;
  double sample_rate_hz = kDefaultSampleRateHz;
  int length = kDefaultLength;
  double noise_std = kDefaultNoiseStd;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  ResonanceSpec resonance;
  SpeedRipple ripple;
};

// Each entry renders a record of count * length points (its profile repeated
// with continuous phase), slices it into windows, normalizes each window and
// splits train/test per entry.
Dataset make_dataset(const SynthSpec& spec);

std::string to_string(SegmentKind kind);
std::string to_string(FaultKind kind);
SegmentKind parse_segment_kind(const std::string& name);
FaultKind parse_fault_kind(const std::string& name);

}  // namespace vgcdm
