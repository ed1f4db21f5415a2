#include "vgcdm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vgcdm/config.hpp"
#include "vgcdm/error.hpp"

namespace vgcdm {
namespace {

constexpr std::array<char, 8> kMagic{'V', 'G', 'C', 'D', 'M', 'C', 'K', '\0'};
constexpr const char* kMomentPrefix1 = "adam.m/";
constexpr const char* kMomentPrefix2 = "adam.v/";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char> take() { return std::move(out_); }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& in) : in_(in) {}

  const char* take(std::size_t n) {
    require(n <= in_.size() - pos_, ErrorCode::kCheckpointFormat, "checkpoint is truncated");
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U uint() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(U)));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
  }
  std::string str() {
    const auto n = uint<std::uint32_t>();
    const char* p = take(n);
    return {p, n};
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<char>& in_;
  std::size_t pos_ = 0;
};

std::size_t shape_numel(const nn::Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

Json config_section(const Checkpoint& c) {
  Json history = Json::array();
  for (const auto& e : c.history) history.push_back(Json::array({e.epoch, e.mean_loss}));
  return Json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"schedule_kind", to_string(c.train.schedule_kind)},
              {"sample_rate_hz", c.sample_rate_hz},
              {"epochs_done", c.epochs_done},
              {"global_step", c.global_step},
              {"history", history}};
}

void read_config_section(const std::string& text, Checkpoint& c) {
  try {
    const Json j = Json::parse(text);
    c.model = denoiser_config_from_json(j.at("model"), "model");
    c.train = train_config_from_json(j.at("train"), "train");
    c.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    c.epochs_done = j.at("epochs_done").get<int>();
    c.global_step = j.at("global_step").get<long long>();
    for (const auto& e : j.at("history")) c.history.push_back({e.at(0).get<int>(), e.at(1).get<double>(), 0.0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCheckpointFormat, std::string("bad config section: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::kCheckpointFormat, std::string("bad config section: ") + e.what());
  }
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Checkpoint snapshot(const TrainingState& state, const TrainConfig& train_cfg, double sample_rate_hz) {
  Checkpoint c;
  c.model = state.model.config();
  c.train = train_cfg;
  c.sample_rate_hz = sample_rate_hz;
  c.epochs_done = state.epochs_done;
  c.global_step = state.optimizer.steps();
  c.history = state.history;
  const auto& params = state.model.params().params();
  for (const auto& p : params) {
    const auto data = p.tensor.data();
    c.tensors.push_back({p.name, p.tensor.shape(), {data.begin(), data.end()}});
  }
  const auto& m = state.optimizer.first_moments();
  const auto& v = state.optimizer.second_moments();
  for (std::size_t i = 0; i < params.size(); ++i)
    c.tensors.push_back({kMomentPrefix1 + params[i].name, params[i].tensor.shape(), m[i]});
  for (std::size_t i = 0; i < params.size(); ++i)
    c.tensors.push_back({kMomentPrefix2 + params[i].name, params[i].tensor.shape(), v[i]});
  return c;
}

std::vector<char> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.uint(static_cast<std::uint32_t>(kCheckpointFormatVersion));
  const std::string config = config_section(c).dump();
  w.uint(static_cast<std::uint64_t>(config.size()));
  w.bytes(config.data(), config.size());

  w.uint(static_cast<std::uint32_t>(c.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    require(shape_numel(t.shape) == t.values.size(), ErrorCode::kShapeMismatch,
            "tensor '" + t.name + "' shape does not match its value count");
    w.str(t.name);
    w.uint(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.uint(static_cast<std::uint64_t>(d));
    w.uint(offset);
    offset += 4 * t.values.size();
  }
  w.uint(offset);
  for (const auto& t : c.tensors)
    for (float x : t.values) w.uint(std::bit_cast<std::uint32_t>(x));
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  Reader r(bytes);
  require(bytes.size() >= kMagic.size() && std::memcmp(r.take(kMagic.size()), kMagic.data(), kMagic.size()) == 0,
          ErrorCode::kCheckpointFormat, "not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  require(version == kCheckpointFormatVersion, ErrorCode::kCheckpointFormat,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const auto config_len = r.uint<std::uint64_t>();
  require(config_len <= r.remaining(), ErrorCode::kCheckpointFormat, "checkpoint is truncated");
  read_config_section(std::string(r.take(config_len), config_len), c);

  struct Entry {
    std::uint64_t offset;
  };
  const auto count = r.uint<std::uint32_t>();
  std::vector<Entry> index;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    const auto rank = r.uint<std::uint32_t>();
    require(rank <= 8, ErrorCode::kCheckpointFormat, "tensor '" + t.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.uint<std::uint64_t>();
      require(dim <= (1u << 30), ErrorCode::kCheckpointFormat, "tensor '" + t.name + "' has implausible shape");
      t.shape.push_back(static_cast<int>(dim));
    }
    index.push_back({r.uint<std::uint64_t>()});
    c.tensors.push_back(std::move(t));
  }
  const auto payload_bytes = r.uint<std::uint64_t>();
  require(payload_bytes == r.remaining(), ErrorCode::kCheckpointFormat,
          "payload size does not match the file size");
  const char* payload = r.take(payload_bytes);
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    auto& t = c.tensors[i];
    const std::uint64_t end = i + 1 < index.size() ? index[i + 1].offset : payload_bytes;
    const std::uint64_t begin = index[i].offset;
    require(begin <= end && end <= payload_bytes, ErrorCode::kCheckpointFormat,
            "tensor '" + t.name + "' has an invalid offset");
    const std::size_t n = shape_numel(t.shape);
    require(end - begin == 4 * n, ErrorCode::kCheckpointFormat,
            "tensor '" + t.name + "' extent does not match its shape");
    t.values.resize(n);
    const auto* p = reinterpret_cast<const unsigned char*>(payload + begin);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint32_t u = std::uint32_t{p[4 * k]} | std::uint32_t{p[4 * k + 1]} << 8 |
                              std::uint32_t{p[4 * k + 2]} << 16 | std::uint32_t{p[4 * k + 3]} << 24;
      t.values[k] = std::bit_cast<float>(u);
    }
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open checkpoint '" + path.string() + "'");
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

namespace {

void load_parameters(nn::ParamStore<float>& store, const Checkpoint& c) {
  for (auto& p : store.params()) {
    const auto* t = c.find(p.name);
    require(t != nullptr, ErrorCode::kCheckpointFormat, "checkpoint lacks parameter '" + p.name + "'");
    require(t->shape == p.tensor.shape(), ErrorCode::kCheckpointFormat,
            "parameter '" + p.name + "' shape differs from the model");
    std::copy(t->values.begin(), t->values.end(), p.tensor.mutable_data().begin());
  }
}

}  // namespace

Denoiser<float> restore_model(const Checkpoint& c) {
  Denoiser<float> model(c.model, model_seed(c.train.seed));
  load_parameters(model.params(), c);
  return model;
}

std::unique_ptr<TrainingState> restore_training(const Checkpoint& c) {
  auto state = std::make_unique<TrainingState>(c.model, c.train);
  load_parameters(state->model.params(), c);
  std::vector<std::vector<float>> m, v;
  for (const auto& p : state->model.params().params()) {
    const auto* tm = c.find(kMomentPrefix1 + p.name);
    const auto* tv = c.find(kMomentPrefix2 + p.name);
    require(tm && tv, ErrorCode::kCheckpointFormat, "checkpoint lacks optimizer state for '" + p.name + "'");
    m.push_back(tm->values);
    v.push_back(tv->values);
  }
  state->optimizer.restore(c.global_step, std::move(m), std::move(v));
  state->epochs_done = c.epochs_done;
  state->history = c.history;
  return state;
}

}  // namespace vgcdm
