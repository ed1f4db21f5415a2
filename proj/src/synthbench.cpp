#include "vgcdm/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "vgcdm/error.hpp"
#include "vgcdm/random.hpp"

namespace vgcdm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFundamentalGain = 0.5;
constexpr double kSecondHarmonicGain = 0.25;
constexpr double kImpulseGain = 1.5;
constexpr double kSpeedKneeHz = 10.0;
constexpr double kInnerRaceModulation = 0.5;
constexpr std::uint64_t kSplitStream = 0x5b1172ull;
constexpr std::uint64_t kRippleStream = 0x7269706cull;

// Vibration strength grows with speed and vanishes at standstill.
double speed_gain(double f) { return f <= 0.0 ? 0.0 : f / (f + kSpeedKneeHz); }

double frac(double x) { return x - std::floor(x); }

ResonanceSpec resolve(const ResonanceSpec& r, double fs) {
  ResonanceSpec out = r;
  if (out.resonance_hz <= 0.0) out.resonance_hz = fs / 5.0;
  if (out.decay_s <= 0.0) out.decay_s = 3.0 / out.resonance_hz;
  require(out.resonance_hz < fs / 2.0, ErrorCode::kConfig, "resonance_hz must be below Nyquist");
  return out;
}

}  // namespace

void SpeedProfile::validate() const {
  require(!segments.empty(), ErrorCode::kConfig, "speed profile '" + id + "' has no segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const std::string where = "profile '" + id + "' segment " + std::to_string(i);
    require(s.duration_s > 0.0 && std::isfinite(s.duration_s), ErrorCode::kConfig,
            where + ": duration_s must be positive");
    require(s.start_hz >= 0.0 && s.end_hz >= 0.0, ErrorCode::kConfig,
            where + ": frequencies must be nonnegative");
    switch (s.kind) {
      case SegmentKind::kStandstill:
        require(s.start_hz == 0.0 && s.end_hz == 0.0, ErrorCode::kConfig,
                where + ": standstill requires start_hz = end_hz = 0");
        break;
      case SegmentKind::kSteady:
        require(s.start_hz == s.end_hz, ErrorCode::kConfig, where + ": steady requires start_hz = end_hz");
        break;
      case SegmentKind::kAccelerate:
        require(s.end_hz > s.start_hz, ErrorCode::kConfig, where + ": accelerate requires end_hz > start_hz");
        break;
      case SegmentKind::kDecelerate:
        require(s.end_hz < s.start_hz, ErrorCode::kConfig, where + ": decelerate requires end_hz < start_hz");
        break;
    }
    if (i > 0)
      require(segments[i - 1].end_hz == s.start_hz, ErrorCode::kConfig,
              where + ": start_hz does not continue the previous segment's end_hz");
  }
}

double SpeedProfile::duration_s() const {
  double d = 0.0;
  for (const auto& s : segments) d += s.duration_s;
  return d;
}

SpeedProfile SpeedProfile::steady(double hz, double duration_s, std::string id) {
  return {std::move(id), {{SegmentKind::kSteady, duration_s, hz, hz}}};
}

SpeedProfile SpeedProfile::standstill(double duration_s, std::string id) {
  return {std::move(id), {{SegmentKind::kStandstill, duration_s, 0.0, 0.0}}};
}

SpeedProfile SpeedProfile::ramp(double start_hz, double end_hz, double duration_s, std::string id) {
  const auto kind = end_hz >= start_hz ? SegmentKind::kAccelerate : SegmentKind::kDecelerate;
  return {std::move(id), {{kind, duration_s, start_hz, end_hz}}};
}

SpeedProfile SpeedProfile::vary_state(double steady_hz, double standstill_s, double ramp_s,
                                      double steady_s, std::string id) {
  return {std::move(id),
          {{SegmentKind::kStandstill, standstill_s, 0.0, 0.0},
           {SegmentKind::kAccelerate, ramp_s, 0.0, steady_hz},
           {SegmentKind::kSteady, steady_s, steady_hz, steady_hz},
           {SegmentKind::kDecelerate, ramp_s, steady_hz, 0.0},
           {SegmentKind::kStandstill, standstill_s, 0.0, 0.0}}};
}

void FaultSpec::validate() const {
  if (kind == FaultKind::kNone) return;
  require(severity > 0.0 && severity <= 1.0, ErrorCode::kConfig, "fault severity must be in (0, 1]");
  require(characteristic_order > 1.0, ErrorCode::kConfig, "characteristic_order must be > 1");
}

ShaftTrack shaft_track(const SpeedProfile& profile, double fs, std::size_t n, bool periodic) {
  profile.validate();
  require(fs > 0.0, ErrorCode::kConfig, "sample rate must be positive");
  const auto& segs = profile.segments;
  std::vector<double> seg_t0(segs.size()), seg_phase0(segs.size());
  double t0 = 0.0, phase0 = 0.0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    seg_t0[i] = t0;
    seg_phase0[i] = phase0;
    t0 += segs[i].duration_s;
    phase0 += 0.5 * (segs[i].start_hz + segs[i].end_hz) * segs[i].duration_s;
  }
  const double total_t = t0, total_phase = phase0;
  const double final_hz = segs.back().end_hz;

  ShaftTrack track;
  track.freq_hz.resize(n);
  track.phase_rev.resize(n);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double tau = static_cast<double>(i) / fs;
    double base_phase = 0.0;
    if (periodic) {
      const double reps = std::floor(tau / total_t);
      tau -= reps * total_t;
      base_phase = reps * total_phase;
    } else if (tau >= total_t) {
      track.freq_hz[i] = final_hz;
      track.phase_rev[i] = total_phase + final_hz * (tau - total_t);
      continue;
    }
    if (tau < seg_t0[seg]) seg = 0;
    while (seg + 1 < segs.size() && tau >= seg_t0[seg + 1]) ++seg;
    const auto& s = segs[seg];
    const double u = tau - seg_t0[seg];
    const double slope = (s.end_hz - s.start_hz) / s.duration_s;
    track.freq_hz[i] = s.start_hz + slope * u;
    track.phase_rev[i] = base_phase + seg_phase0[seg] + s.start_hz * u + 0.5 * slope * u * u;
  }
  return track;
}

void SpeedRipple::validate() const {
  require(std >= 0.0 && std < 0.2, ErrorCode::kConfig, "speed ripple std must lie in [0, 0.2)");
  require(period_s > 0.0, ErrorCode::kConfig, "speed ripple period must be positive");
}

void apply_speed_ripple(ShaftTrack& track, const SpeedRipple& ripple, double fs, std::uint64_t seed) {
  ripple.validate();
  if (ripple.std == 0.0 || track.freq_hz.empty()) return;
  const std::size_t n = track.freq_hz.size();
  const double knot_samples = ripple.period_s * fs;
  Rng rng(seed);
  std::vector<double> knots(static_cast<std::size_t>(static_cast<double>(n) / knot_samples) + 2);
  for (auto& k : knots) k = ripple.std * rng.normal();
  double phase = track.phase_rev[0];
  double prev_hz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) / knot_samples;
    const auto j = static_cast<std::size_t>(pos);
    const double u = pos - static_cast<double>(j);
    const double hz = track.freq_hz[i] * (1.0 + (1.0 - u) * knots[j] + u * knots[j + 1]);
    if (i > 0) phase += 0.5 * (prev_hz + hz) / fs;
    track.freq_hz[i] = hz;
    track.phase_rev[i] = phase;
    prev_hz = hz;
  }
}

std::vector<float> render_voltage(const ShaftTrack& track) {
  std::vector<float> v(track.freq_hz.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = (track.freq_hz[i] > 0.0 && frac(track.phase_rev[i]) < kPulseDuty) ? 1.0f : 0.0f;
  return v;
}

std::vector<float> render_vibration(const ShaftTrack& track, const FaultSpec& fault, double fs,
                                    double noise_std, std::uint64_t seed,
                                    const ResonanceSpec& resonance) {
  fault.validate();
  require(noise_std >= 0.0, ErrorCode::kConfig, "noise_std must be nonnegative");
  const auto res = resolve(resonance, fs);
  const std::size_t n = track.freq_hz.size();
  std::vector<double> x(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const double phi = track.phase_rev[i];
    x[i] = speed_gain(track.freq_hz[i]) *
           (kFundamentalGain * std::sin(kTwoPi * phi) + kSecondHarmonicGain * std::sin(2.0 * kTwoPi * phi + 0.3));
  }

  if (fault.kind != FaultKind::kNone) {
    const double order = fault.characteristic_order;
    const auto tail = static_cast<std::size_t>(std::ceil(8.0 * res.decay_s * fs));
    for (std::size_t i = 1; i < n; ++i) {
      const double prev = order * track.phase_rev[i - 1];
      const double cur = order * track.phase_rev[i];
      if (std::floor(cur) <= std::floor(prev)) continue;
      // Sub-sample onset of the crossing.
      const double back = (cur - std::floor(cur)) / (cur - prev);
      const double onset = (static_cast<double>(i) - back) / fs;
      double amp = kImpulseGain * fault.severity * speed_gain(track.freq_hz[i]);
      if (fault.kind == FaultKind::kInnerRace)
        amp *= 1.0 + kInnerRaceModulation * std::cos(kTwoPi * track.phase_rev[i]);
      for (std::size_t m = i; m < std::min(n, i + tail); ++m) {
        const double dt = static_cast<double>(m) / fs - onset;
        x[m] += amp * std::exp(-dt / res.decay_s) * std::sin(kTwoPi * res.resonance_hz * dt);
      }
    }
  }

  Rng rng(seed);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(x[i] + noise_std * rng.normal());
  return out;
}

Signal gen_voltage(const SpeedProfile& profile, double fs, int length) {
  require(length > 0, ErrorCode::kConfig, "length must be positive");
  auto values = render_voltage(shaft_track(profile, fs, static_cast<std::size_t>(length)));
  normalize_in_place(values);
  return {std::move(values), fs};
}

Signal gen_vibration(const SpeedProfile& profile, const FaultSpec& fault, double fs, int length,
                     double noise_std, std::uint64_t seed, const ResonanceSpec& resonance) {
  require(length > 0, ErrorCode::kConfig, "length must be positive");
  auto values = render_vibration(shaft_track(profile, fs, static_cast<std::size_t>(length)), fault,
                                 fs, noise_std, seed, resonance);
  normalize_in_place(values);
  return {std::move(values), fs};
}

int count_pulses(std::span<const float> voltage) {
  int pulses = 0;
  bool high = false;
  for (float v : voltage) {
    const bool now = v > 0.5f;
    if (now && !high) ++pulses;
    high = now;
  }
  return pulses;
}

std::string default_label(const FaultSpec& fault) {
  if (fault.kind == FaultKind::kNone) return "NC";
  const std::string prefix = fault.kind == FaultKind::kInnerRace ? "IF" : "OF";
  constexpr double kSeverities[] = {0.3, 0.6, 1.0};
  for (int i = 0; i < 3; ++i)
    if (std::abs(fault.severity - kSeverities[i]) < 1e-12) return prefix + std::to_string(i + 1);
  std::ostringstream os;
  os << prefix << '@' << fault.severity;
  return os.str();
}

Dataset make_dataset(const SynthSpec& spec) {
  require(!spec.entries.empty(), ErrorCode::kConfig, "synth spec has no entries");
  require(spec.length > 0 && spec.sample_rate_hz > 0.0, ErrorCode::kConfig,
          "length and sample_rate_hz must be positive");
  require(spec.train_fraction >= 0.0 && spec.train_fraction <= 1.0, ErrorCode::kConfig,
          "train_fraction must be in [0, 1]");

  spec.ripple.validate();

  Dataset ds;
  ds.manifest.length = spec.length;
  ds.manifest.sample_rate_hz = spec.sample_rate_hz;

  for (std::size_t e = 0; e < spec.entries.size(); ++e) {
    const auto& entry = spec.entries[e];
    const std::string where = "entry " + std::to_string(e);
    require(entry.count > 0, ErrorCode::kConfig, where + ": count must be positive");
    entry.profile.validate();
    entry.fault.validate();
    require(entry.profile.duration_s() * spec.sample_rate_hz >= spec.length,
            ErrorCode::kInsufficientData,
            where + ": profile shorter than one " + std::to_string(spec.length) + "-point sample");

    const std::size_t n = static_cast<std::size_t>(entry.count) * static_cast<std::size_t>(spec.length);
    auto track = shaft_track(entry.profile, spec.sample_rate_hz, n, /*periodic=*/true);
    apply_speed_ripple(track, spec.ripple, spec.sample_rate_hz, derive_seed(spec.seed ^ kRippleStream, e));
    const auto voltage = render_voltage(track);
    const auto vibration = render_vibration(track, entry.fault, spec.sample_rate_hz, spec.noise_std,
                                            derive_seed(spec.seed, e), spec.resonance);
    const auto vib_windows = slice_nonoverlapping(vibration, spec.length, spec.sample_rate_hz);
    const auto volt_windows = slice_nonoverlapping(voltage, spec.length, spec.sample_rate_hz);
    const auto split = make_split(entry.count, spec.train_fraction,
                                  derive_seed(spec.seed ^ kSplitStream, e));

    const std::string label = entry.label.empty() ? default_label(entry.fault) : entry.label;
    const std::string profile_id =
        entry.profile.id.empty() ? "profile" + std::to_string(e) : entry.profile.id;
    if (std::find(ds.manifest.label_set.begin(), ds.manifest.label_set.end(), label) ==
        ds.manifest.label_set.end())
      ds.manifest.label_set.push_back(label);

    for (int i = 0; i < entry.count; ++i) {
      ds.samples.push_back({normalize(vib_windows[i]), normalize(volt_windows[i]), label, profile_id});
      ds.manifest.split.push_back(split[i]);
    }
  }
  ds.manifest.n_samples = static_cast<int>(ds.samples.size());
  ds.validate();
  return ds;
}

std::string to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kStandstill: return "standstill";
    case SegmentKind::kAccelerate: return "accelerate";
    case SegmentKind::kSteady: return "steady";
    case SegmentKind::kDecelerate: return "decelerate";
  }
  return "?";
}

std::string to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::kNone: return "none";
    case FaultKind::kInnerRace: return "inner_race";
    case FaultKind::kOuterRace: return "outer_race";
  }
  return "?";
}

SegmentKind parse_segment_kind(const std::string& name) {
  for (auto k : {SegmentKind::kStandstill, SegmentKind::kAccelerate, SegmentKind::kSteady,
                 SegmentKind::kDecelerate})
    if (to_string(k) == name) return k;
  fail(ErrorCode::kConfig, "unknown segment kind '" + name + "'");
}

FaultKind parse_fault_kind(const std::string& name) {
  for (auto k : {FaultKind::kNone, FaultKind::kInnerRace, FaultKind::kOuterRace})
    if (to_string(k) == name) return k;
  fail(ErrorCode::kConfig, "unknown fault kind '" + name + "'");
}

}  // namespace vgcdm
