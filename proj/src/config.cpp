#include "kmbart/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "kmbart/error.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {
namespace {

using json = nlohmann::json;

template <typename T>
T read(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config field '" + path + "' has the wrong type");
  }
}

[[noreturn]] void unknown_key(const std::string& path) {
  throw ValidationError("unknown config field '" + path + "'");
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError("config field '" + path + "' must be an object");
}

}  // namespace

Interleave parse_interleave(std::string_view name) {
  if (name == "round-robin") return Interleave::round_robin;
  if (name == "joint") return Interleave::joint;
  throw ValidationError("unknown interleave mode '" + std::string(name) + "' (round-robin|joint)");
}

std::string_view interleave_name(Interleave mode) {
  return mode == Interleave::round_robin ? "round-robin" : "joint";
}

ObjectiveSet parse_tasks(std::string_view list) {
  ObjectiveSet set;
  std::string item;
  std::stringstream in{std::string(list)};
  while (std::getline(in, item, ',')) {
    if (item == "kcg") set.kcg = true;
    else if (item == "ap") set.ap = true;
    else if (item == "rp") set.rp = true;
    else if (item == "mlm") set.mlm = true;
    else if (item == "mrm") set.mrm = true;
    else throw ValidationError("unknown task '" + item + "' (expected kcg, ap, rp, mlm, mrm)");
  }
  return set;
}

std::string tasks_string(const ObjectiveSet& tasks) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(tasks.kcg, "kcg");
  add(tasks.ap, "ap");
  add(tasks.rp, "rp");
  add(tasks.mlm, "mlm");
  add(tasks.mrm, "mrm");
  return out;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.optimizer.lr = 5e-4;
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c;
  c.model = ModelConfig::paper(0);
  c.schedule.epochs = 20;
  c.schedule.batch_size = 256;
  c.optimizer.lr = 1e-5;
  return c;
}

RunConfig RunConfig::preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ValidationError("unknown preset '" + std::string(name) + "' (desk|paper)");
}

void RunConfig::validate() const {
  ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = tok::reserved_count;
  if (dropout_rate) m.dropout_rate = *dropout_rate;
  m.validate();
  if (schedule.epochs < 1) throw ValidationError("schedule.epochs must be >= 1");
  if (schedule.batch_size < 1) throw ValidationError("schedule.batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ValidationError("optimizer.lr must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ValidationError("optimizer betas must be in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ValidationError("optimizer.eps must be positive");
  if (!(optimizer.weight_decay >= 0.0)) throw ValidationError("optimizer.weight_decay must be >= 0");
  if (!tasks.any()) throw ValidationError("tasks: at least one objective must be active");
  if (threads < 1) throw ValidationError("threads must be >= 1");
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},         {"n_enc_layers", c.n_enc_layers}, {"n_dec_layers", c.n_dec_layers},
          {"n_heads", c.n_heads},         {"d_ffn", c.d_ffn},               {"vocab_size", c.vocab_size},
          {"d_visual", c.d_visual},       {"n_classes", c.n_classes},       {"n_attr", c.n_attr},
          {"n_rel", c.n_rel},             {"max_positions", c.max_positions}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig base) {
  require_object(j, "model");
  for (const auto& [key, value] : j.items()) {
    const std::string path = "model." + key;
    int* field = nullptr;
    if (key == "d_model") field = &base.d_model;
    else if (key == "n_enc_layers") field = &base.n_enc_layers;
    else if (key == "n_dec_layers") field = &base.n_dec_layers;
    else if (key == "n_heads") field = &base.n_heads;
    else if (key == "d_ffn") field = &base.d_ffn;
    else if (key == "vocab_size") field = &base.vocab_size;
    else if (key == "d_visual") field = &base.d_visual;
    else if (key == "n_classes") field = &base.n_classes;
    else if (key == "n_attr") field = &base.n_attr;
    else if (key == "n_rel") field = &base.n_rel;
    else if (key == "max_positions") field = &base.max_positions;
    else unknown_key(path);
    *field = read<int>(value, path);
  }
  return base;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = to_json(c.model);
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["schedule"] = {{"epochs", c.schedule.epochs}, {"batch_size", c.schedule.batch_size}, {"seed", c.schedule.seed}};
  j["dropout_rate"] = c.dropout_rate ? nlohmann::ordered_json(*c.dropout_rate) : nlohmann::ordered_json();
  j["loss_weights"] = {{"kcg", c.loss_weights.kcg},
                       {"ap", c.loss_weights.ap},
                       {"rp", c.loss_weights.rp},
                       {"mlm", c.loss_weights.mlm},
                       {"mrm", c.loss_weights.mrm}};
  j["tasks"] = tasks_string(c.tasks);
  j["use_event"] = c.use_event;
  j["interleave"] = std::string(interleave_name(c.interleave));
  j["paths"] = {{"train", c.paths.train},
                {"validation", c.paths.validation},
                {"vocab", c.paths.vocab},
                {"output", c.paths.output},
                {"init_checkpoint", c.paths.init_checkpoint}};
  j["threads"] = c.threads;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  require_object(j, "config");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      c.model = model_config_from_json(value, c.model);
    } else if (key == "optimizer") {
      require_object(value, key);
      for (const auto& [k, v] : value.items()) {
        const std::string path = "optimizer." + k;
        if (k == "lr") c.optimizer.lr = read<double>(v, path);
        else if (k == "beta1") c.optimizer.beta1 = read<double>(v, path);
        else if (k == "beta2") c.optimizer.beta2 = read<double>(v, path);
        else if (k == "eps") c.optimizer.eps = read<double>(v, path);
        else if (k == "weight_decay") c.optimizer.weight_decay = read<double>(v, path);
        else unknown_key(path);
      }
    } else if (key == "schedule") {
      require_object(value, key);
      for (const auto& [k, v] : value.items()) {
        const std::string path = "schedule." + k;
        if (k == "epochs") c.schedule.epochs = read<int>(v, path);
        else if (k == "batch_size") c.schedule.batch_size = read<int>(v, path);
        else if (k == "seed") c.schedule.seed = read<std::uint64_t>(v, path);
        else unknown_key(path);
      }
    } else if (key == "dropout_rate") {
      c.dropout_rate = value.is_null() ? std::nullopt : std::optional<double>(read<double>(value, key));
    } else if (key == "loss_weights") {
      require_object(value, key);
      for (const auto& [k, v] : value.items()) {
        const std::string path = "loss_weights." + k;
        if (k == "kcg") c.loss_weights.kcg = read<float>(v, path);
        else if (k == "ap") c.loss_weights.ap = read<float>(v, path);
        else if (k == "rp") c.loss_weights.rp = read<float>(v, path);
        else if (k == "mlm") c.loss_weights.mlm = read<float>(v, path);
        else if (k == "mrm") c.loss_weights.mrm = read<float>(v, path);
        else unknown_key(path);
      }
    } else if (key == "tasks") {
      c.tasks = parse_tasks(read<std::string>(value, key));
    } else if (key == "use_event") {
      c.use_event = read<bool>(value, key);
    } else if (key == "interleave") {
      c.interleave = parse_interleave(read<std::string>(value, key));
    } else if (key == "paths") {
      require_object(value, key);
      for (const auto& [k, v] : value.items()) {
        const std::string path = "paths." + k;
        if (k == "train") c.paths.train = read<std::string>(v, path);
        else if (k == "validation") c.paths.validation = read<std::string>(v, path);
        else if (k == "vocab") c.paths.vocab = read<std::string>(v, path);
        else if (k == "output") c.paths.output = read<std::string>(v, path);
        else if (k == "init_checkpoint") c.paths.init_checkpoint = read<std::string>(v, path);
        else unknown_key(path);
      }
    } else if (key == "threads") {
      c.threads = read<int>(value, key);
    } else {
      unknown_key(key);
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

void apply_override(json& config, std::string_view dotted, std::string_view value) {
  if (dotted.empty()) throw ValidationError("empty override key");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = std::string(value);
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (key.empty()) throw ValidationError("malformed override key '" + std::string(dotted) + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string_view::npos) {
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& config) { return fnv1a_hex(to_json(config).dump()); }

}  // namespace kmbart
