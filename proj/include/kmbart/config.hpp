#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "kmbart/losses.hpp"
#include "kmbart/model.hpp"
#include "kmbart/optim.hpp"

namespace kmbart {

enum class Interleave {
  round_robin,  // one task group per step, cycling
  joint,        // every active term on one mixed batch
};

Interleave parse_interleave(std::string_view name);
std::string_view interleave_name(Interleave mode);

// Parses "kcg,ap,rp,mlm,mrm" (any subset, any order).
ObjectiveSet parse_tasks(std::string_view list);
std::string tasks_string(const ObjectiveSet& tasks);

struct ScheduleConfig {
  int epochs = 2;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct PathsConfig {
  std::string train;
  std::string validation;
  std::string vocab;
  std::string output;
  std::string init_checkpoint;
};

struct RunConfig {
  ModelConfig model;
  AdamWOptions optimizer;
  ScheduleConfig schedule;
  // Unset means the command default: 0.1 for pretrain, 0.3 for finetune.
  std::optional<double> dropout_rate;
  LossWeights loss_weights;
  ObjectiveSet tasks{true, true, true, true, true};
  bool use_event = true;
  Interleave interleave = Interleave::round_robin;
  PathsConfig paths;
  int threads = 1;

  // Small model, batch 16, lr 5e-4.
  static RunConfig desk();
  // 6+6 layers of width 768, batch 256, lr 1e-5, 20 epochs.
  static RunConfig paper();
  static RunConfig preset(std::string_view name);

  // Throws ValidationError on any inconsistent field.
  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& config);
// Fields absent from j keep the values of base.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

nlohmann::ordered_json to_json(const RunConfig& config);
// Unknown keys throw ValidationError naming the dotted path.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = RunConfig::desk());
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = RunConfig::desk());

// Sets the field at a dotted path ("schedule.seed", "model.d_model") from
// a command-line string. The value is read as JSON when it parses and as a
// bare string otherwise.
void apply_override(nlohmann::json& config, std::string_view dotted, std::string_view value);

// FNV-1a 64 of the compact JSON dump, as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string config_hash(const RunConfig& config);

}  // namespace kmbart
