#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kmbart/example.hpp"
#include "kmbart/ops.hpp"
#include "kmbart/tensor.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {

struct ModelConfig {
  int d_model = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_heads = 4;
  int d_ffn = 256;
  int vocab_size = 0;
  int d_visual = 32;
  int n_classes = 10;
  int n_attr = 8;
  int n_rel = 4;
  int max_positions = 128;
  double dropout_rate = 0.1;

  static ModelConfig desk(int vocab_size);
  static ModelConfig paper(int vocab_size);

  // Throws ValidationError on non-positive sizes, d_model % n_heads != 0,
  // or a dropout rate outside [0, 1).
  void validate() const;

  // Names of architecture fields that differ (dropout is not architecture).
  std::vector<std::string> architecture_diff(const ModelConfig& other) const;

  // Closed form; equals Model<S>::params().numel().
  Index parameter_count() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class Segment : std::uint8_t { task, visual, text, pad };

enum class AssemblyMode {
  generation,  // KCG / finetune / scoring: task token + optional event block
  masked,      // MLM / MRM: <caption> + <mlm> text block
  region,      // AP / RP: <region_caption>, no text block
};

struct AssemblyOptions {
  AssemblyMode mode = AssemblyMode::generation;
  bool use_event = true;
  bool mask_text = true;     // masked mode only
  bool mask_regions = true;  // masked mode only
  std::uint64_t seed = 0;
};

// Token-level view of one example, ready for embedding.
//
// Encoder layout: task token, <img>, one slot per RoI, </img>, optional text
// block. Masked and region modes decode the encoder sequence itself with
// <img_feat> at visual slots and <cls> at masked positions; generation mode
// decodes <s> + target and predicts target + </s>.
struct AssembledInput {
  std::vector<int> encoder_ids;  // <img_feat> placeholder at visual slots
  std::vector<int> visual_slots; // encoder position of each RoI, in RoI order
  std::vector<Segment> segments;
  std::vector<std::uint8_t> encoder_mask;  // 1 = real token
  std::vector<int> decoder_input;
  std::vector<int> decoder_target;  // tok::pad where nothing is predicted
  std::vector<std::uint8_t> decoder_mask;
  std::vector<int> mrm_regions;    // masked RoI indices
  std::vector<int> mlm_positions;  // masked text positions
  std::vector<int> mlm_original;   // original ids at mlm_positions

  int encoder_length() const { return static_cast<int>(encoder_ids.size()); }
  int decoder_length() const { return static_cast<int>(decoder_input.size()); }
};

// Throws LengthError when either side exceeds max_positions and
// ValidationError for a generation-mode example without a generation task.
AssembledInput assemble_input(const MultimodalExample& example, const Vocabulary& vocab,
                              const AssemblyOptions& options, int max_positions);

enum class Init {
  normal,  // N(0, init_std) weights, zero biases, unit norm gains
  zero,    // every parameter zero: all heads predict uniform distributions
};

template <typename S>
class Model {
 public:
  Model(ModelConfig config, Init init = Init::normal, std::uint64_t seed = 0, double init_std = 0.02);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet<S>& params() noexcept { return params_; }
  const ParameterSet<S>& params() const noexcept { return params_; }
  const Tensor<S>& p(std::string_view name) const { return params_.at(name); }

  // Parameters of a second instantiation with the same architecture.
  template <typename T>
  void copy_from(const Model<T>& other) {
    for (auto& e : params_.entries()) {
      e.tensor.data() = other.p(e.name).data().template cast<S>();
    }
  }

 private:
  ModelConfig config_;
  ParameterSet<S> params_;
};

// Per-forward context: the tape to record on, train/eval mode, and the
// generator that draws dropout masks.
template <typename S>
struct Pass {
  Tape<S>& tape;
  bool training = false;
  Rng* rng = nullptr;
};

// Token embeddings at token positions, projected RoI features at visual
// slots (masked RoIs are zero-filled first), plus learned positions.
template <typename S>
Tensor<S> embed(Pass<S>& pass, const Model<S>& model, const AssembledInput& input,
                std::span<const RoIFeature> rois);

// Pre-norm bidirectional encoder; mask[j] == 0 hides key j.
template <typename S>
Tensor<S> encode(Pass<S>& pass, const Model<S>& model, const Tensor<S>& embedded,
                 std::span<const std::uint8_t> mask);

// Pre-norm causal decoder with cross-attention to memory.
template <typename S>
Tensor<S> decode(Pass<S>& pass, const Model<S>& model, std::span<const int> decoder_ids,
                 std::span<const std::uint8_t> decoder_mask, const Tensor<S>& memory,
                 std::span<const std::uint8_t> memory_mask);

// Tied to the token embedding matrix.
template <typename S>
Tensor<S> lm_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden);

template <typename S>
Tensor<S> mrm_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden);

template <typename S>
Tensor<S> ap_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden);

// Input rows are [subject hidden, object hidden], width 2 * d_model.
template <typename S>
Tensor<S> rp_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& pair_hidden);

template <typename S>
struct ForwardOutput {
  Tensor<S> memory;  // encoder output
  Tensor<S> hidden;  // decoder output
};

template <typename S>
ForwardOutput<S> forward(Pass<S>& pass, const Model<S>& model, const AssembledInput& input,
                         std::span<const RoIFeature> rois);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace kmbart
