#include "kmbart/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kmbart/error.hpp"

namespace kmbart {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using Kind = CheckpointError::Kind;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::uint64_t n, const char* what) {
    need(n, what);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(Kind::truncated, std::string("checkpoint truncated while reading ") + what + " at byte " +
                                                 std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

const std::string kMomentPrefixM = "adamw.m.";
const std::string kMomentPrefixV = "adamw.v.";

}  // namespace

const CheckpointTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

RunConfig Checkpoint::run_config() const {
  if (!header.contains("config")) throw CheckpointError(Kind::config_mismatch, "checkpoint header has no config");
  return run_config_from_json(nlohmann::json::parse(header["config"].dump()));
}

ModelConfig Checkpoint::model_config() const { return run_config().model; }

std::int64_t Checkpoint::global_step() const {
  return header.contains("global_step") ? header["global_step"].get<std::int64_t>() : 0;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto header = checkpoint.header.dump();
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& t : checkpoint.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != std::string_view(kCheckpointMagic, 4)) {
    throw CheckpointError(Kind::bad_magic, "not a checkpoint file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::bad_version, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto header_len = in.get<std::uint64_t>("header length");
  const auto header = in.take(header_len, "header");
  try {
    ckpt.header = nlohmann::ordered_json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(Kind::truncated, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = in.get<std::uint32_t>("tensor name length");
    t.name = std::string(in.take(name_len, "tensor name"));
    const auto ndim = in.get<std::uint32_t>("tensor rank");
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      const auto d = in.get<std::uint32_t>("tensor dims");
      if (d == 0) throw CheckpointError(Kind::shape_disagreement, "tensor '" + t.name + "' has a zero dimension");
      t.shape.push_back(d);
      numel *= d;
      if (numel > bytes.size()) throw CheckpointError(Kind::truncated, "tensor '" + t.name + "' runs past the end");
    }
    const auto raw = in.take(numel * sizeof(float), "tensor data");
    t.data.resize(numel);
    std::memcpy(t.data.data(), raw.data(), raw.size());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!in.at_end()) throw CheckpointError(Kind::truncated, "trailing bytes after the last tensor");

  ModelConfig config;
  try {
    config = ckpt.model_config();
    config.validate();
  } catch (const ValidationError& e) {
    throw CheckpointError(Kind::config_mismatch, std::string("checkpoint config: ") + e.what());
  }
  const Model<float> reference(config, Init::zero);
  for (const auto& e : reference.params().entries()) {
    const auto* t = ckpt.find(e.name);
    if (!t) throw CheckpointError(Kind::missing_parameter, "checkpoint lacks parameter '" + e.name + "'");
    if (t->shape != e.tensor.shape()) {
      throw CheckpointError(Kind::shape_disagreement, "parameter '" + e.name + "' has shape " +
                                                          shape_string(t->shape) + ", its config implies " +
                                                          shape_string(e.tensor.shape()));
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const auto bytes = serialize_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

Checkpoint make_checkpoint(const RunConfig& config, const Model<float>& model, const AdamW<float>* optimizer,
                           std::int64_t global_step) {
  Checkpoint ckpt;
  RunConfig stored = config;
  stored.model = model.config();
  ckpt.header["config"] = to_json(stored);
  ckpt.header["global_step"] = global_step;
  ckpt.header["optimizer"] = optimizer ? nlohmann::ordered_json{{"step", optimizer->step_count()}}
                                       : nlohmann::ordered_json();
  const auto& entries = model.params().entries();
  auto add = [&](const std::string& name, const Shape& shape, const Tensor<float>::Array& data) {
    ckpt.tensors.push_back({name, shape, std::vector<float>(data.data(), data.data() + data.size())});
  };
  for (const auto& e : entries) add(e.name, e.tensor.shape(), e.tensor.data());
  if (optimizer) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      add(kMomentPrefixM + entries[i].name, entries[i].tensor.shape(), optimizer->first_moments()[i]);
      add(kMomentPrefixV + entries[i].name, entries[i].tensor.shape(), optimizer->second_moments()[i]);
    }
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& checkpoint, Model<float>& model) {
  for (auto& e : model.params().entries()) {
    const auto* t = checkpoint.find(e.name);
    if (!t) throw CheckpointError(Kind::missing_parameter, "checkpoint lacks parameter '" + e.name + "'");
    if (t->shape != e.tensor.shape()) {
      throw CheckpointError(Kind::shape_disagreement, "parameter '" + e.name + "': checkpoint shape " +
                                                          shape_string(t->shape) + ", model shape " +
                                                          shape_string(e.tensor.shape()));
    }
  }
  for (auto& e : model.params().entries()) {
    const auto* t = checkpoint.find(e.name);
    e.tensor.data() = Eigen::Map<const Tensor<float>::Array>(t->data.data(), static_cast<Index>(t->data.size()));
  }
}

bool restore_optimizer(const Checkpoint& checkpoint, const Model<float>& model, AdamW<float>& optimizer) {
  if (!checkpoint.header.contains("optimizer") || checkpoint.header["optimizer"].is_null()) return false;
  std::vector<Tensor<float>::Array> m, v;
  for (const auto& e : model.params().entries()) {
    const auto* tm = checkpoint.find(kMomentPrefixM + e.name);
    const auto* tv = checkpoint.find(kMomentPrefixV + e.name);
    if (!tm || !tv) {
      throw CheckpointError(Kind::missing_parameter, "checkpoint lacks optimizer state for '" + e.name + "'");
    }
    m.push_back(Eigen::Map<const Tensor<float>::Array>(tm->data.data(), static_cast<Index>(tm->data.size())));
    v.push_back(Eigen::Map<const Tensor<float>::Array>(tv->data.data(), static_cast<Index>(tv->data.size())));
  }
  optimizer.restore(checkpoint.header["optimizer"]["step"].get<std::int64_t>(), std::move(m), std::move(v));
  return true;
}

void check_architecture(const ModelConfig& expected, const ModelConfig& found) {
  const auto diff = expected.architecture_diff(found);
  if (diff.empty()) return;
  std::string msg = "checkpoint model config differs in:";
  for (const auto& d : diff) msg += " " + d;
  throw CheckpointError(Kind::config_mismatch, msg);
}

}  // namespace kmbart
