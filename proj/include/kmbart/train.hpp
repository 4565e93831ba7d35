#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kmbart/checkpoint.hpp"
#include "kmbart/config.hpp"
#include "kmbart/example.hpp"
#include "kmbart/losses.hpp"
#include "kmbart/model.hpp"
#include "kmbart/optim.hpp"
#include "kmbart/rng.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {

enum class TrainMode {
  pretrain,  // every active objective, grouped by example kind
  finetune,  // KCG only on intent / before / after examples
};

inline constexpr double kPretrainDropout = 0.1;
inline constexpr double kFinetuneDropout = 0.3;

// Examples are grouped by the objectives they feed:
//   kcg     intent / before / after examples, generation layout
//   region  region_caption examples, AP and RP
//   caption caption examples, MLM and MRM in the same pass
enum class TaskGroup { kcg, region, caption };

std::string_view group_name(TaskGroup group);

struct StepRecord {
  std::int64_t step = 0;  // 1-based global step
  int epoch = 0;          // 1-based
  std::string group;      // group name, or "joint"
  std::optional<float> kcg, ap, rp, mlm, mrm;
  float total = 0.0F;
  LossWeights weights;
};

nlohmann::ordered_json to_json(const StepRecord& record);

struct EpochRecord {
  int epoch = 0;
  std::int64_t steps = 0;
  std::optional<float> validation_kcg;
};

nlohmann::ordered_json to_json(const EpochRecord& record);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

class Trainer {
 public:
  // Fills config.model.vocab_size from vocab when it is 0. With init, the
  // architecture must match (CheckpointError config_mismatch otherwise) and
  // parameters start from the checkpoint; optimizer state is not carried
  // over.
  Trainer(RunConfig config, TrainMode mode, const Vocabulary& vocab,
          const Checkpoint* init = nullptr);

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const RunConfig& config() const noexcept { return config_; }
  TrainMode mode() const noexcept { return mode_; }
  Model<float>& model() noexcept { return model_; }
  const Model<float>& model() const noexcept { return model_; }
  AdamW<float>& optimizer() noexcept { return optimizer_; }
  const AdamW<float>& optimizer() const noexcept { return optimizer_; }
  std::int64_t global_step() const noexcept { return step_; }
  double dropout_rate() const noexcept { return model_.config().dropout_rate; }

  // Runs config.schedule.epochs epochs. Throws ValidationError when an
  // active objective has no examples to train on.
  std::vector<EpochRecord> run(std::span<const MultimodalExample> train,
                               std::span<const MultimodalExample> validation = {},
                               const TrainHooks& hooks = {});

  // One optimizer step on the given examples of one group (or several
  // groups in joint mode). Returns nullopt without updating when the batch
  // yields no loss term (for example, nothing was masked).
  std::optional<StepRecord> train_step(std::span<const MultimodalExample* const> examples, int epoch,
                                       std::string_view group);

  // Teacher-forced loss breakdown without an update, eval mode.
  LossBreakdown<float> evaluate_terms(std::span<const MultimodalExample* const> examples,
                                      std::uint64_t mask_seed) const;

  // Token-weighted mean KCG loss over the generation examples, eval mode.
  // nullopt when there are none.
  std::optional<float> validation_kcg(std::span<const MultimodalExample> examples) const;

  Checkpoint checkpoint() const;

 private:
  ObjectiveSet objectives_for(TaskGroup group) const;
  std::vector<AssembledInput> assemble(std::span<const MultimodalExample* const> examples,
                                       std::uint64_t mask_seed, std::vector<ObjectiveSet>& objectives) const;
  LossBreakdown<float> terms(Pass<float>& pass, std::span<const MultimodalExample* const> examples,
                             std::uint64_t mask_seed) const;

  RunConfig config_;
  TrainMode mode_;
  const Vocabulary* vocab_;
  Model<float> model_;
  AdamW<float> optimizer_;
  Rng dropout_rng_;
  std::int64_t step_ = 0;
};

// Group an example belongs to.
TaskGroup task_group(TaskType task);

}  // namespace kmbart
