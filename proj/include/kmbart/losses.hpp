#pragma once

#include <optional>
#include <span>
#include <vector>

#include "kmbart/example.hpp"
#include "kmbart/model.hpp"

namespace kmbart {

// Loss weights for (KCG, AP, RP, MLM, MRM); defaults are the full-model
// setting (1, 1, 1, 5, 1).
struct LossWeights {
  float kcg = 1.0F;
  float ap = 1.0F;
  float rp = 1.0F;
  float mlm = 5.0F;
  float mrm = 1.0F;

  bool operator==(const LossWeights&) const = default;
};

// Every term is a per-unit mean in nats. Absent terms had no applicable
// units in the batch and do not contribute to total.
template <typename S>
struct LossBreakdown {
  std::optional<Tensor<S>> kcg;
  std::optional<Tensor<S>> ap;
  std::optional<Tensor<S>> rp;
  std::optional<Tensor<S>> mlm;
  std::optional<Tensor<S>> mrm;
  LossWeights weights;
  Tensor<S> total;

  bool any() const { return kcg || ap || rp || mlm || mrm; }
};

// Mean over non-pad targets of -ln P(target | prefix, text, regions).
// Throws EmptyLossError when every target is pad.
template <typename S>
Tensor<S> loss_kcg(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                   std::span<const int> targets);

// Mean cross-entropy of ap_head over the given hidden rows; nullopt when
// rows is empty.
template <typename S>
std::optional<Tensor<S>> loss_ap(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                 std::span<const int> rows, std::span<const int> labels);

// Mean cross-entropy of rp_head on [hidden[subject], hidden[object]] rows.
// Throws RangeError for a row outside hidden.
template <typename S>
std::optional<Tensor<S>> loss_rp(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                 std::span<const int> subject_rows, std::span<const int> object_rows,
                                 std::span<const int> labels);

// Mean cross-entropy of lm_head at masked rows only.
template <typename S>
std::optional<Tensor<S>> loss_mlm(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                  std::span<const int> rows, std::span<const int> original_ids);

// Mean over masked regions of KL(p || softmax(mrm_head)). detector_probs is
// [rows.size() x n_classes].
template <typename S>
std::optional<Tensor<S>> loss_mrm(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                  std::span<const int> rows, const Tensor<S>& detector_probs);

// total = sum of weight * term over present terms, accumulated in the order
// KCG, AP, RP, MLM, MRM. Throws ValidationError when no term is present.
template <typename S>
LossBreakdown<S> combine_losses(Tape<S>& tape, LossBreakdown<S> terms, const LossWeights& weights);

struct ObjectiveSet {
  bool kcg = false;
  bool ap = false;
  bool rp = false;
  bool mlm = false;
  bool mrm = false;

  bool any() const { return kcg || ap || rp || mlm || mrm; }
  bool operator==(const ObjectiveSet&) const = default;
};

// Forwards every (input, example) pair and computes the requested terms
// with per-unit means over the whole batch. inputs may be padded; examples
// supply RoIs and annotations. total is left undefined.
template <typename S>
LossBreakdown<S> batch_terms(Pass<S>& pass, const Model<S>& model,
                             std::span<const AssembledInput> inputs,
                             std::span<const MultimodalExample* const> examples,
                             const ObjectiveSet& objectives);

}  // namespace kmbart
