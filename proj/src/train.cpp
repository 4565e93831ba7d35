#include "kmbart/train.hpp"

#include <array>
#include <cmath>

#include "kmbart/data.hpp"
#include "kmbart/error.hpp"

namespace kmbart {
namespace {

constexpr std::uint64_t kInitStream = 0x494e4954;
constexpr std::uint64_t kDropoutStream = 0x44524f50;
constexpr std::uint64_t kShuffleStream = 0x53485546;
constexpr std::uint64_t kMaskStream = 0x4d41534b;

constexpr std::array<TaskGroup, 3> kGroups = {TaskGroup::kcg, TaskGroup::region, TaskGroup::caption};

RunConfig prepared(RunConfig config, TrainMode mode, const Vocabulary& vocab) {
  if (config.model.vocab_size == 0) config.model.vocab_size = vocab.size();
  if (config.model.vocab_size != vocab.size()) {
    throw ValidationError("model.vocab_size is " + std::to_string(config.model.vocab_size) +
                          " but the vocabulary has " + std::to_string(vocab.size()) + " tokens");
  }
  config.model.dropout_rate =
      config.dropout_rate.value_or(mode == TrainMode::finetune ? kFinetuneDropout : kPretrainDropout);
  if (mode == TrainMode::finetune) config.tasks = ObjectiveSet{true, false, false, false, false};
  config.validate();
  return config;
}

void merge(LossBreakdown<float>& into, const LossBreakdown<float>& from) {
  if (from.kcg) into.kcg = from.kcg;
  if (from.ap) into.ap = from.ap;
  if (from.rp) into.rp = from.rp;
  if (from.mlm) into.mlm = from.mlm;
  if (from.mrm) into.mrm = from.mrm;
}

std::optional<float> value(const std::optional<Tensor<float>>& t) {
  return t ? std::optional<float>(t->item()) : std::nullopt;
}

}  // namespace

std::string_view group_name(TaskGroup group) {
  switch (group) {
    case TaskGroup::kcg: return "kcg";
    case TaskGroup::region: return "region";
    case TaskGroup::caption: return "caption";
  }
  return "";
}

TaskGroup task_group(TaskType task) {
  switch (task) {
    case TaskType::caption: return TaskGroup::caption;
    case TaskType::region_caption: return TaskGroup::region;
    default: return TaskGroup::kcg;
  }
}

nlohmann::ordered_json to_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["group"] = r.group;
  auto term = [&](const char* name, const std::optional<float>& v) {
    if (v) j[name] = *v;
  };
  term("kcg", r.kcg);
  term("ap", r.ap);
  term("rp", r.rp);
  term("mlm", r.mlm);
  term("mrm", r.mrm);
  j["total"] = r.total;
  j["weights"] = {r.weights.kcg, r.weights.ap, r.weights.rp, r.weights.mlm, r.weights.mrm};
  return j;
}

nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["steps"] = r.steps;
  j["validation_kcg"] = r.validation_kcg ? nlohmann::ordered_json(*r.validation_kcg) : nlohmann::ordered_json();
  return j;
}

Trainer::Trainer(RunConfig config, TrainMode mode, const Vocabulary& vocab, const Checkpoint* init)
    : config_(prepared(std::move(config), mode, vocab)),
      mode_(mode),
      vocab_(&vocab),
      model_(config_.model, Init::normal, mix_seed(config_.schedule.seed, kInitStream)),
      optimizer_(model_.params(), config_.optimizer),
      dropout_rng_(mix_seed(config_.schedule.seed, kDropoutStream)) {
  if (init) {
    check_architecture(config_.model, init->model_config());
    apply_checkpoint(*init, model_);
  }
}

ObjectiveSet Trainer::objectives_for(TaskGroup group) const {
  const auto& t = config_.tasks;
  switch (group) {
    case TaskGroup::kcg: return {t.kcg, false, false, false, false};
    case TaskGroup::region: return {false, t.ap, t.rp, false, false};
    case TaskGroup::caption: return {false, false, false, t.mlm, t.mrm};
  }
  return {};
}

std::vector<AssembledInput> Trainer::assemble(std::span<const MultimodalExample* const> examples,
                                              std::uint64_t mask_seed,
                                              std::vector<ObjectiveSet>& objectives) const {
  std::vector<AssembledInput> inputs;
  objectives.clear();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto group = task_group(examples[i]->task);
    const auto obj = objectives_for(group);
    AssemblyOptions options;
    options.use_event = config_.use_event;
    options.seed = mix_seed(mask_seed, i);
    switch (group) {
      case TaskGroup::kcg: options.mode = AssemblyMode::generation; break;
      case TaskGroup::region: options.mode = AssemblyMode::region; break;
      case TaskGroup::caption:
        options.mode = AssemblyMode::masked;
        options.mask_text = obj.mlm;
        options.mask_regions = obj.mrm;
        break;
    }
    inputs.push_back(assemble_input(*examples[i], *vocab_, options, model_.config().max_positions));
    objectives.push_back(obj);
  }
  return inputs;
}

LossBreakdown<float> Trainer::terms(Pass<float>& pass, std::span<const MultimodalExample* const> examples,
                                    std::uint64_t mask_seed) const {
  std::vector<ObjectiveSet> objectives;
  const auto inputs = assemble(examples, mask_seed, objectives);
  LossBreakdown<float> out;
  for (const auto group : kGroups) {
    std::vector<AssembledInput> sub_inputs;
    std::vector<const MultimodalExample*> sub_examples;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (task_group(examples[i]->task) != group) continue;
      sub_inputs.push_back(inputs[i]);
      sub_examples.push_back(examples[i]);
    }
    const auto obj = objectives_for(group);
    if (sub_inputs.empty() || !obj.any()) continue;
    merge(out, batch_terms<float>(pass, model_, sub_inputs, sub_examples, obj));
  }
  return out;
}

std::optional<StepRecord> Trainer::train_step(std::span<const MultimodalExample* const> examples, int epoch,
                                              std::string_view group) {
  Tape<float> tape(true);
  Pass<float> pass{tape, true, &dropout_rng_};
  auto breakdown = terms(pass, examples, mix_seed(mix_seed(config_.schedule.seed, kMaskStream), step_ + 1));
  if (!breakdown.any()) return std::nullopt;
  breakdown = combine_losses(tape, std::move(breakdown), config_.loss_weights);
  model_.params().zero_grad();
  tape.backward(breakdown.total);
  optimizer_.step();
  ++step_;

  StepRecord record;
  record.step = step_;
  record.epoch = epoch;
  record.group = std::string(group);
  record.kcg = value(breakdown.kcg);
  record.ap = value(breakdown.ap);
  record.rp = value(breakdown.rp);
  record.mlm = value(breakdown.mlm);
  record.mrm = value(breakdown.mrm);
  record.total = breakdown.total.item();
  record.weights = breakdown.weights;
  return record;
}

LossBreakdown<float> Trainer::evaluate_terms(std::span<const MultimodalExample* const> examples,
                                             std::uint64_t mask_seed) const {
  Tape<float> tape(false);
  Pass<float> pass{tape, false, nullptr};
  auto breakdown = terms(pass, examples, mask_seed);
  if (breakdown.any()) breakdown = combine_losses(tape, std::move(breakdown), config_.loss_weights);
  return breakdown;
}

std::optional<float> Trainer::validation_kcg(std::span<const MultimodalExample> examples) const {
  std::vector<AssembledInput> inputs;
  std::vector<const MultimodalExample*> members;
  for (const auto& ex : examples) {
    if (!is_generation_task(ex.task)) continue;
    AssemblyOptions options;
    options.use_event = config_.use_event;
    inputs.push_back(assemble_input(ex, *vocab_, options, model_.config().max_positions));
    members.push_back(&ex);
  }
  if (inputs.empty()) return std::nullopt;
  Tape<float> tape(false);
  Pass<float> pass{tape, false, nullptr};
  const auto breakdown = batch_terms<float>(pass, model_, inputs, members, ObjectiveSet{true, false, false, false, false});
  return breakdown.kcg->item();
}

std::vector<EpochRecord> Trainer::run(std::span<const MultimodalExample> train,
                                      std::span<const MultimodalExample> validation, const TrainHooks& hooks) {
  std::array<std::vector<const MultimodalExample*>, kGroups.size()> members;
  for (const auto& ex : train) {
    const auto group = task_group(ex.task);
    if (objectives_for(group).any()) members[static_cast<std::size_t>(group)].push_back(&ex);
  }
  const auto& t = config_.tasks;
  auto require = [&](bool active, TaskGroup group, const char* what) {
    if (active && members[static_cast<std::size_t>(group)].empty()) {
      throw ValidationError(std::string("active objective ") + what + " has no training examples (" +
                            std::string(group_name(group)) + " group is empty)");
    }
  };
  require(t.kcg, TaskGroup::kcg, "kcg");
  require(t.ap, TaskGroup::region, "ap");
  require(t.rp, TaskGroup::region, "rp");
  require(t.mlm, TaskGroup::caption, "mlm");
  require(t.mrm, TaskGroup::caption, "mrm");

  const auto bs = static_cast<std::size_t>(config_.schedule.batch_size);
  std::vector<EpochRecord> epochs;
  for (int epoch = 1; epoch <= config_.schedule.epochs; ++epoch) {
    std::array<std::vector<std::vector<std::size_t>>, kGroups.size()> batches;
    std::array<std::size_t, kGroups.size()> cursor{};
    for (std::size_t g = 0; g < kGroups.size(); ++g) {
      const auto seed = mix_seed(mix_seed(config_.schedule.seed, kShuffleStream), epoch * 8 + g);
      batches[g] = batch_indices(members[g].size(), bs, seed, true);
    }
    auto pointers = [&](std::size_t g, const std::vector<std::size_t>& idx) {
      std::vector<const MultimodalExample*> out;
      for (auto i : idx) out.push_back(members[g][i]);
      return out;
    };
    const auto start_step = step_;
    bool remaining = true;
    while (remaining) {
      remaining = false;
      if (config_.interleave == Interleave::round_robin) {
        for (std::size_t g = 0; g < kGroups.size(); ++g) {
          if (cursor[g] >= batches[g].size()) continue;
          const auto batch = pointers(g, batches[g][cursor[g]++]);
          const auto record = train_step(batch, epoch, group_name(kGroups[g]));
          if (record && hooks.on_step) hooks.on_step(*record);
          remaining = remaining || cursor[g] < batches[g].size();
        }
      } else {
        std::vector<const MultimodalExample*> batch;
        for (std::size_t g = 0; g < kGroups.size(); ++g) {
          if (cursor[g] >= batches[g].size()) continue;
          const auto part = pointers(g, batches[g][cursor[g]++]);
          batch.insert(batch.end(), part.begin(), part.end());
          remaining = remaining || cursor[g] < batches[g].size();
        }
        if (batch.empty()) break;
        const auto record = train_step(batch, epoch, "joint");
        if (record && hooks.on_step) hooks.on_step(*record);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = step_ - start_step;
    if (!validation.empty()) rec.validation_kcg = validation_kcg(validation);
    epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return epochs;
}

Checkpoint Trainer::checkpoint() const { return make_checkpoint(config_, model_, &optimizer_, step_); }

}  // namespace kmbart
