#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kmbart/config.hpp"
#include "kmbart/model.hpp"
#include "kmbart/optim.hpp"

namespace kmbart {

inline constexpr char kCheckpointMagic[4] = {'K', 'M', 'B', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const CheckpointTensor&) const = default;
};

// Binary layout, little-endian: "KMBT", u32 version, u64 header length,
// header JSON bytes, u32 tensor count, then per tensor u32 name length,
// name bytes, u32 ndim, u32 dims, f32 data.
//
// The header holds {"config": RunConfig, "global_step": n, "optimizer":
// {"step": k} | null}. AdamW moments, when present, are stored as tensors
// named "adamw.m.<param>" and "adamw.v.<param>".
struct Checkpoint {
  nlohmann::ordered_json header;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(std::string_view name) const;
  RunConfig run_config() const;
  ModelConfig model_config() const;
  std::int64_t global_step() const;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);

// Throws CheckpointError: bad_magic, bad_version, truncated (including any
// length field that runs past the end), shape_disagreement when a parameter
// shape differs from the embedded model config, missing_parameter.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot of model parameters (and optimizer moments when given).
Checkpoint make_checkpoint(const RunConfig& config, const Model<float>& model,
                           const AdamW<float>* optimizer, std::int64_t global_step);

// Copies parameters into model. Throws CheckpointError shape_disagreement
// naming the tensor and both shapes, or missing_parameter.
void apply_checkpoint(const Checkpoint& checkpoint, Model<float>& model);

// Restores AdamW moments; returns false when the checkpoint has none.
bool restore_optimizer(const Checkpoint& checkpoint, const Model<float>& model, AdamW<float>& optimizer);

// Throws CheckpointError config_mismatch listing every differing
// architecture field.
void check_architecture(const ModelConfig& expected, const ModelConfig& found);

}  // namespace kmbart
