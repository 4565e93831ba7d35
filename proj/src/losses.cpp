#include "kmbart/losses.hpp"

namespace kmbart {
namespace {

void check_rows(std::span<const int> rows, Index limit, const char* what) {
  for (int r : rows) {
    if (r < 0 || r >= limit) {
      throw RangeError(std::string(what) + ": row " + std::to_string(r) + " outside [0, " +
                       std::to_string(limit) + ")");
    }
  }
}

}  // namespace

template <typename S>
Tensor<S> loss_kcg(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                   std::span<const int> targets) {
  return cross_entropy(pass.tape, lm_head(pass, model, hidden), targets, tok::pad);
}

template <typename S>
std::optional<Tensor<S>> loss_ap(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                 std::span<const int> rows, std::span<const int> labels) {
  if (rows.empty()) return std::nullopt;
  check_rows(rows, hidden.rows(), "loss_ap");
  const auto logits = ap_head(pass, model, gather_rows(pass.tape, hidden, rows));
  return cross_entropy(pass.tape, logits, labels, -1);
}

template <typename S>
std::optional<Tensor<S>> loss_rp(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                 std::span<const int> subject_rows, std::span<const int> object_rows,
                                 std::span<const int> labels) {
  if (subject_rows.size() != object_rows.size()) {
    throw DimensionError("loss_rp: subject and object lists differ in length");
  }
  if (subject_rows.empty()) return std::nullopt;
  check_rows(subject_rows, hidden.rows(), "loss_rp");
  check_rows(object_rows, hidden.rows(), "loss_rp");
  auto& tape = pass.tape;
  const auto pairs = concat_cols(tape, std::vector<Tensor<S>>{gather_rows(tape, hidden, subject_rows),
                                                              gather_rows(tape, hidden, object_rows)});
  return cross_entropy(tape, rp_head(pass, model, pairs), labels, -1);
}

template <typename S>
std::optional<Tensor<S>> loss_mlm(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                  std::span<const int> rows, std::span<const int> original_ids) {
  if (rows.empty()) return std::nullopt;
  check_rows(rows, hidden.rows(), "loss_mlm");
  const auto logits = lm_head(pass, model, gather_rows(pass.tape, hidden, rows));
  return cross_entropy(pass.tape, logits, original_ids, -1);
}

template <typename S>
std::optional<Tensor<S>> loss_mrm(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden,
                                  std::span<const int> rows, const Tensor<S>& detector_probs) {
  if (rows.empty()) return std::nullopt;
  check_rows(rows, hidden.rows(), "loss_mrm");
  auto& tape = pass.tape;
  const auto log_q = log_softmax(tape, mrm_head(pass, model, gather_rows(tape, hidden, rows)));
  return kl_divergence(tape, detector_probs, log_q);
}

template <typename S>
LossBreakdown<S> combine_losses(Tape<S>& tape, LossBreakdown<S> terms, const LossWeights& weights) {
  if (!terms.any()) throw ValidationError("combine_losses: no loss term is present");
  terms.weights = weights;
  Tensor<S> total;
  auto accumulate = [&](const std::optional<Tensor<S>>& term, float w) {
    if (!term) return;
    const auto weighted = scale(tape, *term, S(w));
    total = total.defined() ? add(tape, total, weighted) : weighted;
  };
  accumulate(terms.kcg, weights.kcg);
  accumulate(terms.ap, weights.ap);
  accumulate(terms.rp, weights.rp);
  accumulate(terms.mlm, weights.mlm);
  accumulate(terms.mrm, weights.mrm);
  terms.total = total;
  return terms;
}

template <typename S>
LossBreakdown<S> batch_terms(Pass<S>& pass, const Model<S>& model,
                             std::span<const AssembledInput> inputs,
                             std::span<const MultimodalExample* const> examples,
                             const ObjectiveSet& objectives) {
  if (inputs.size() != examples.size()) {
    throw DimensionError("batch_terms: inputs and examples differ in count");
  }
  if (inputs.empty()) throw ValidationError("batch_terms: empty batch");
  auto& tape = pass.tape;
  std::vector<Tensor<S>> hidden_parts;
  std::vector<int> kcg_targets, ap_rows, ap_labels, rp_subject, rp_object, rp_labels;
  std::vector<int> mlm_rows, mlm_targets, mrm_rows;
  std::vector<S> mrm_probs;
  int offset = 0;
  const int n_classes = model.config().n_classes;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    const auto& ex = *examples[i];
    const auto out = forward(pass, model, in, ex.rois);
    hidden_parts.push_back(out.hidden);
    if (objectives.kcg) kcg_targets.insert(kcg_targets.end(), in.decoder_target.begin(), in.decoder_target.end());
    if (objectives.ap) {
      for (const auto& a : ex.attributes) {
        ap_rows.push_back(offset + in.visual_slots.at(a.roi));
        ap_labels.push_back(a.label);
      }
    }
    if (objectives.rp) {
      for (const auto& r : ex.relations) {
        rp_subject.push_back(offset + in.visual_slots.at(r.subject));
        rp_object.push_back(offset + in.visual_slots.at(r.object));
        rp_labels.push_back(r.label);
      }
    }
    if (objectives.mlm) {
      for (std::size_t m = 0; m < in.mlm_positions.size(); ++m) {
        mlm_rows.push_back(offset + in.mlm_positions[m]);
        mlm_targets.push_back(in.mlm_original[m]);
      }
    }
    if (objectives.mrm) {
      for (int r : in.mrm_regions) {
        mrm_rows.push_back(offset + in.visual_slots.at(r));
        const auto& p = ex.rois.at(r).class_probs;
        if (static_cast<int>(p.size()) != n_classes) {
          throw DimensionError("RoI class distribution has " + std::to_string(p.size()) +
                               " entries, model expects " + std::to_string(n_classes));
        }
        for (float v : p) mrm_probs.push_back(S(v));
      }
    }
    offset += in.decoder_length();
  }
  const auto hidden = hidden_parts.size() == 1 ? hidden_parts.front() : concat_rows(tape, hidden_parts);

  LossBreakdown<S> terms;
  if (objectives.kcg) terms.kcg = loss_kcg(pass, model, hidden, kcg_targets);
  if (objectives.ap) terms.ap = loss_ap(pass, model, hidden, ap_rows, ap_labels);
  if (objectives.rp) terms.rp = loss_rp(pass, model, hidden, rp_subject, rp_object, rp_labels);
  if (objectives.mlm) terms.mlm = loss_mlm(pass, model, hidden, mlm_rows, mlm_targets);
  if (objectives.mrm && !mrm_rows.empty()) {
    const auto p = Tensor<S>::from_values({static_cast<Index>(mrm_rows.size()), n_classes}, mrm_probs);
    terms.mrm = loss_mrm(pass, model, hidden, mrm_rows, p);
  }
  return terms;
}

#define KMBART_INSTANTIATE_LOSSES(S)                                                              \
  template Tensor<S> loss_kcg(Pass<S>&, const Model<S>&, const Tensor<S>&, std::span<const int>); \
  template std::optional<Tensor<S>> loss_ap(Pass<S>&, const Model<S>&, const Tensor<S>&,          \
                                            std::span<const int>, std::span<const int>);          \
  template std::optional<Tensor<S>> loss_rp(Pass<S>&, const Model<S>&, const Tensor<S>&,          \
                                            std::span<const int>, std::span<const int>,           \
                                            std::span<const int>);                                \
  template std::optional<Tensor<S>> loss_mlm(Pass<S>&, const Model<S>&, const Tensor<S>&,         \
                                             std::span<const int>, std::span<const int>);         \
  template std::optional<Tensor<S>> loss_mrm(Pass<S>&, const Model<S>&, const Tensor<S>&,         \
                                             std::span<const int>, const Tensor<S>&);             \
  template LossBreakdown<S> combine_losses(Tape<S>&, LossBreakdown<S>, const LossWeights&);       \
  template LossBreakdown<S> batch_terms(Pass<S>&, const Model<S>&, std::span<const AssembledInput>, \
                                        std::span<const MultimodalExample* const>,                \
                                        const ObjectiveSet&);

KMBART_INSTANTIATE_LOSSES(float)
KMBART_INSTANTIATE_LOSSES(double)

#undef KMBART_INSTANTIATE_LOSSES

}  // namespace kmbart
