#include "vgcdm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "vgcdm/error.hpp"

namespace vgcdm {
namespace {

// Typed access to one JSON object that remembers which keys were consumed.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j_.is_object(), ErrorCode::kConfig,
            (where_.empty() ? std::string("document") : "'" + where_ + "'") + " must be an object");
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, int& out) {
    if (const Json* v = find(key)) {
      require(v->is_number_integer(), ErrorCode::kConfig, "'" + path(key) + "' must be an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const Json* v = find(key)) {
      require(v->is_number_unsigned() || (v->is_number_integer() && v->get<long long>() >= 0),
              ErrorCode::kConfig, "'" + path(key) + "' must be a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      require(v->is_number(), ErrorCode::kConfig, "'" + path(key) + "' must be a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      require(v->is_boolean(), ErrorCode::kConfig, "'" + path(key) + "' must be a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      require(v->is_string(), ErrorCode::kConfig, "'" + path(key) + "' must be a string");
      out = v->get<std::string>();
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    if (const Json* v = find(key)) {
      require(v->is_array(), ErrorCode::kConfig, "'" + path(key) + "' must be an array");
      out.clear();
      for (const auto& e : *v) {
        require(e.is_number_integer(), ErrorCode::kConfig, "'" + path(key) + "' must hold integers");
        out.push_back(e.get<int>());
      }
    }
  }

  // Parses an enum-valued string key through `parse`, naming the key on failure.
  template <typename Enum, typename Parse>
  void get_enum(const std::string& key, Enum& out, Parse parse) {
    std::string name;
    get(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const Error& e) {
      fail(ErrorCode::kConfig, "'" + path(key) + "': " + e.what());
    }
  }

  void finish() const {
    for (const auto& item : j_.items())
      require(seen_.contains(item.key()), ErrorCode::kConfig, "unknown key '" + path(item.key()) + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// Re-raises a validation failure with the section name attached.
template <typename F>
void validated(const std::string& where, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, "'" + where + "': " + e.what());
  }
}

std::string psnr_policy_name(PsnrIdenticalPolicy p) {
  return p == PsnrIdenticalPolicy::kCap ? "cap" : "error";
}

PsnrIdenticalPolicy parse_psnr_policy(const std::string& name) {
  if (name == "cap") return PsnrIdenticalPolicy::kCap;
  if (name == "error") return PsnrIdenticalPolicy::kError;
  fail(ErrorCode::kConfig, "unknown psnr_identical policy '" + name + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.empty() || p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

Json to_json(const DenoiserConfig& c) {
  return Json{{"length", c.length},
              {"base_channels", c.base_channels},
              {"channel_multipliers", c.channel_multipliers},
              {"res_blocks_per_level", c.res_blocks_per_level},
              {"time_embed_dim", c.time_embed_dim},
              {"n_heads", c.n_heads},
              {"inner_dim", c.inner_dim},
              {"encoder_depth", c.encoder_depth},
              {"norm_groups", c.norm_groups},
              {"condition_enabled", c.condition_enabled}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"loss", to_string(c.loss_kind)},
              {"schedule", to_string(c.schedule_kind)},
              {"T", c.T},
              {"beta_start", c.beta_start},
              {"beta_end", c.beta_end},
              {"cosine_offset", c.cosine_offset},
              {"seed", c.seed},
              {"condition_enabled", c.condition_enabled},
              {"grad_clip", c.grad_clip}};
}

Json to_json(const MetricConfig& c) {
  return Json{{"psnr_identical", psnr_policy_name(c.psnr_identical)},
              {"psnr_cap_db", c.psnr_cap_db}};
}

Json to_json(const RunConfig& c) {
  return Json{{"dataset", c.dataset.string()},
              {"out_dir", c.out_dir.string()},
              {"seed", c.train.seed},
              {"model", to_json(c.model)},
              {"train",
               {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"loss", to_string(c.train.loss_kind)},
                {"grad_clip", c.train.grad_clip}}},
              {"schedule",
               {{"kind", to_string(c.train.schedule_kind)},
                {"T", c.train.T},
                {"beta_start", c.train.beta_start},
                {"beta_end", c.train.beta_end},
                {"cosine_offset", c.train.cosine_offset}}},
              {"metrics", to_json(c.metrics)},
              {"sample", {{"batch_size", c.sample_batch_size}}}};
}

DenoiserConfig denoiser_config_from_json(const Json& j, const std::string& where) {
  DenoiserConfig c;
  Fields f(j, where);
  f.get("length", c.length);
  f.get("base_channels", c.base_channels);
  f.get("channel_multipliers", c.channel_multipliers);
  f.get("res_blocks_per_level", c.res_blocks_per_level);
  f.get("time_embed_dim", c.time_embed_dim);
  f.get("n_heads", c.n_heads);
  f.get("inner_dim", c.inner_dim);
  f.get("encoder_depth", c.encoder_depth);
  f.get("norm_groups", c.norm_groups);
  f.get("condition_enabled", c.condition_enabled);
  f.finish();
  validated(where, [&] { c.validate(); });
  return c;
}

TrainConfig train_config_from_json(const Json& j, const std::string& where) {
  TrainConfig c;
  Fields f(j, where);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("learning_rate", c.learning_rate);
  f.get("weight_decay", c.weight_decay);
  f.get_enum("loss", c.loss_kind, parse_loss_kind);
  f.get_enum("schedule", c.schedule_kind, parse_schedule_kind);
  f.get("T", c.T);
  f.get("beta_start", c.beta_start);
  f.get("beta_end", c.beta_end);
  f.get("cosine_offset", c.cosine_offset);
  f.get("seed", c.seed);
  f.get("condition_enabled", c.condition_enabled);
  f.get("grad_clip", c.grad_clip);
  f.finish();
  validated(where, [&] { c.validate(); });
  return c;
}

MetricConfig metric_config_from_json(const Json& j, const std::string& where) {
  MetricConfig c;
  Fields f(j, where);
  f.get_enum("psnr_identical", c.psnr_identical, parse_psnr_policy);
  f.get("psnr_cap_db", c.psnr_cap_db);
  f.finish();
  require(c.psnr_cap_db > 0.0, ErrorCode::kConfig, "'" + f.path("psnr_cap_db") + "' must be > 0");
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  require(sample_batch_size >= 1, ErrorCode::kConfig, "sample.batch_size must be >= 1");
  require(model.condition_enabled == train.condition_enabled, ErrorCode::kConfig,
          "model and train condition flags differ");
}

RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  Fields f(j, "");
  std::string dataset, out_dir = c.out_dir.string();
  f.get("dataset", dataset);
  f.get("out_dir", out_dir);
  c.dataset = resolve(base_dir, dataset);
  c.out_dir = resolve(base_dir, out_dir);
  f.get("seed", c.train.seed);

  if (const Json* m = f.find("model")) c.model = denoiser_config_from_json(*m, "model");
  c.train.condition_enabled = c.model.condition_enabled;

  if (const Json* t = f.find("train")) {
    Fields g(*t, "train");
    g.get("epochs", c.train.epochs);
    g.get("batch_size", c.train.batch_size);
    g.get("learning_rate", c.train.learning_rate);
    g.get("weight_decay", c.train.weight_decay);
    g.get_enum("loss", c.train.loss_kind, parse_loss_kind);
    g.get("grad_clip", c.train.grad_clip);
    g.finish();
  }
  if (const Json* s = f.find("schedule")) {
    Fields g(*s, "schedule");
    g.get_enum("kind", c.train.schedule_kind, parse_schedule_kind);
    g.get("T", c.train.T);
    g.get("beta_start", c.train.beta_start);
    g.get("beta_end", c.train.beta_end);
    g.get("cosine_offset", c.train.cosine_offset);
    g.finish();
  }
  if (const Json* m = f.find("metrics")) c.metrics = metric_config_from_json(*m, "metrics");
  if (const Json* s = f.find("sample")) {
    Fields g(*s, "sample");
    g.get("batch_size", c.sample_batch_size);
    g.finish();
  }
  f.finish();
  validated("config", [&] { c.validate(); });
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_json_file(path), path.parent_path());
}

Json to_json(const SynthSpec& spec) {
  Json profiles = Json::array(), entries = Json::array();
  std::vector<std::string> ids;
  for (std::size_t e = 0; e < spec.entries.size(); ++e) {
    const auto& entry = spec.entries[e];
    const std::string id = entry.profile.id.empty() ? "profile" + std::to_string(e) : entry.profile.id;
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      ids.push_back(id);
      Json segs = Json::array();
      for (const auto& s : entry.profile.segments)
        segs.push_back({{"kind", to_string(s.kind)},
                        {"duration_s", s.duration_s},
                        {"start_hz", s.start_hz},
                        {"end_hz", s.end_hz}});
      profiles.push_back({{"id", id}, {"segments", segs}});
    }
    entries.push_back({{"profile", id},
                       {"fault",
                        {{"kind", to_string(entry.fault.kind)},
                         {"severity", entry.fault.severity},
                         {"order", entry.fault.characteristic_order}}},
                       {"count", entry.count},
                       {"label", entry.label}});
  }
  return Json{{"sample_rate_hz", spec.sample_rate_hz},
              {"length", spec.length},
              {"noise_std", spec.noise_std},
              {"train_fraction", spec.train_fraction},
              {"seed", spec.seed},
              {"resonance",
               {{"resonance_hz", spec.resonance.resonance_hz}, {"decay_s", spec.resonance.decay_s}}},
              {"speed_ripple", {{"std", spec.ripple.std}, {"period_s", spec.ripple.period_s}}},
              {"profiles", profiles},
              {"entries", entries}};
}

SynthSpec parse_synth_spec(const Json& j) {
  SynthSpec spec;
  Fields f(j, "");
  f.get("sample_rate_hz", spec.sample_rate_hz);
  f.get("length", spec.length);
  f.get("noise_std", spec.noise_std);
  f.get("train_fraction", spec.train_fraction);
  f.get("seed", spec.seed);
  if (const Json* r = f.find("resonance")) {
    Fields g(*r, "resonance");
    g.get("resonance_hz", spec.resonance.resonance_hz);
    g.get("decay_s", spec.resonance.decay_s);
    g.finish();
  }
  if (const Json* r = f.find("speed_ripple")) {
    Fields g(*r, "speed_ripple");
    g.get("std", spec.ripple.std);
    g.get("period_s", spec.ripple.period_s);
    g.finish();
  }
  require(spec.sample_rate_hz > 0.0, ErrorCode::kConfig, "'sample_rate_hz' must be > 0");
  require(spec.length >= 2, ErrorCode::kConfig, "'length' must be >= 2");
  require(spec.noise_std >= 0.0, ErrorCode::kConfig, "'noise_std' must be >= 0");
  require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0, ErrorCode::kConfig,
          "'train_fraction' must lie in (0, 1)");

  std::vector<SpeedProfile> profiles;
  const Json* pj = f.find("profiles");
  require(pj && pj->is_array() && !pj->empty(), ErrorCode::kConfig,
          "'profiles' must be a nonempty array");
  for (std::size_t p = 0; p < pj->size(); ++p) {
    const std::string where = "profiles[" + std::to_string(p) + "]";
    Fields g((*pj)[p], where);
    SpeedProfile profile;
    g.get("id", profile.id);
    require(!profile.id.empty(), ErrorCode::kConfig, "'" + g.path("id") + "' is required");
    for (const auto& other : profiles)
      require(other.id != profile.id, ErrorCode::kConfig, "duplicate profile id '" + profile.id + "'");
    const Json* sj = g.find("segments");
    require(sj && sj->is_array() && !sj->empty(), ErrorCode::kConfig,
            "'" + g.path("segments") + "' must be a nonempty array");
    double prev_end = 0.0;
    for (std::size_t s = 0; s < sj->size(); ++s) {
      Fields h((*sj)[s], g.path("segments") + "[" + std::to_string(s) + "]");
      ProfileSegment seg;
      h.get_enum("kind", seg.kind, parse_segment_kind);
      require(h.find("kind") != nullptr, ErrorCode::kConfig, "'" + h.path("kind") + "' is required");
      h.get("duration_s", seg.duration_s);
      seg.start_hz = seg.kind == SegmentKind::kStandstill ? 0.0 : prev_end;
      seg.end_hz = seg.start_hz;
      double hz = -1.0;
      h.get("hz", hz);
      if (hz >= 0.0) seg.start_hz = seg.end_hz = hz;
      h.get("start_hz", seg.start_hz);
      if (seg.kind == SegmentKind::kSteady && hz < 0.0) seg.end_hz = seg.start_hz;
      h.get("end_hz", seg.end_hz);
      h.finish();
      prev_end = seg.end_hz;
      profile.segments.push_back(seg);
    }
    g.finish();
    validated(where, [&] { profile.validate(); });
    profiles.push_back(std::move(profile));
  }

  const Json* ej = f.find("entries");
  require(ej && ej->is_array() && !ej->empty(), ErrorCode::kConfig,
          "'entries' must be a nonempty array");
  for (std::size_t e = 0; e < ej->size(); ++e) {
    Fields g((*ej)[e], "entries[" + std::to_string(e) + "]");
    DatasetEntry entry;
    std::string profile_id;
    g.get("profile", profile_id);
    const auto it = std::find_if(profiles.begin(), profiles.end(),
                                 [&](const SpeedProfile& p) { return p.id == profile_id; });
    require(it != profiles.end(), ErrorCode::kConfig,
            "'" + g.path("profile") + "' names unknown profile '" + profile_id + "'");
    entry.profile = *it;
    if (const Json* fj = g.find("fault")) {
      Fields h(*fj, g.path("fault"));
      h.get_enum("kind", entry.fault.kind, parse_fault_kind);
      entry.fault.characteristic_order =
          entry.fault.kind == FaultKind::kInnerRace ? kInnerRaceOrder : kOuterRaceOrder;
      h.get("severity", entry.fault.severity);
      h.get("order", entry.fault.characteristic_order);
      h.finish();
      validated(g.path("fault"), [&] { entry.fault.validate(); });
    }
    g.get("count", entry.count);
    require(entry.count >= 1, ErrorCode::kConfig, "'" + g.path("count") + "' must be >= 1");
    g.get("label", entry.label);
    g.finish();
    spec.entries.push_back(std::move(entry));
  }
  f.finish();
  return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) { return parse_synth_spec(read_json_file(path)); }

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return Json::parse(buffer.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::vector<std::string> config_differences(const DenoiserConfig& a, const DenoiserConfig& b) {
  const Json ja = to_json(a), jb = to_json(b);
  std::vector<std::string> out;
  for (const auto& item : ja.items())
    if (item.value() != jb.at(item.key())) out.push_back(item.key());
  return out;
}

}  // namespace vgcdm
