#include "kmbart/model.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "kmbart/masking.hpp"
#include "kmbart/rng.hpp"

namespace kmbart {

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::desk(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::paper(int vocab_size) {
  ModelConfig c;
  c.d_model = 768;
  c.n_enc_layers = 6;
  c.n_dec_layers = 6;
  c.n_heads = 12;
  c.d_ffn = 3072;
  c.vocab_size = vocab_size;
  c.d_visual = 1024;
  c.n_classes = 80;
  c.n_attr = 400;
  c.n_rel = 50;
  c.max_positions = 1024;
  return c;
}

void ModelConfig::validate() const {
  const std::pair<const char*, int> sizes[] = {
      {"d_model", d_model},     {"n_enc_layers", n_enc_layers}, {"n_dec_layers", n_dec_layers},
      {"n_heads", n_heads},     {"d_ffn", d_ffn},               {"vocab_size", vocab_size},
      {"d_visual", d_visual},   {"n_classes", n_classes},       {"n_attr", n_attr},
      {"n_rel", n_rel},         {"max_positions", max_positions}};
  for (const auto& [name, value] : sizes) {
    if (value <= 0) {
      throw ValidationError(std::string("model config: ") + name + " must be positive, got " +
                            std::to_string(value));
    }
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("model config: d_model " + std::to_string(d_model) +
                          " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (vocab_size < tok::reserved_count) {
    throw ValidationError("model config: vocab_size must cover the reserved tokens");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("model config: dropout_rate must be in [0, 1)");
  }
}

std::vector<std::string> ModelConfig::architecture_diff(const ModelConfig& other) const {
  std::vector<std::string> diff;
  auto check = [&](const char* name, int a, int b) {
    if (a != b) diff.push_back(std::string(name) + " (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  };
  check("d_model", d_model, other.d_model);
  check("n_enc_layers", n_enc_layers, other.n_enc_layers);
  check("n_dec_layers", n_dec_layers, other.n_dec_layers);
  check("n_heads", n_heads, other.n_heads);
  check("d_ffn", d_ffn, other.d_ffn);
  check("vocab_size", vocab_size, other.vocab_size);
  check("d_visual", d_visual, other.d_visual);
  check("n_classes", n_classes, other.n_classes);
  check("n_attr", n_attr, other.n_attr);
  check("n_rel", n_rel, other.n_rel);
  check("max_positions", max_positions, other.max_positions);
  return diff;
}

Index ModelConfig::parameter_count() const {
  const Index d = d_model, f = d_ffn, v = vocab_size, p = max_positions;
  const Index attention = 4 * (d * d + d);
  const Index norm = 2 * d;
  const Index ffn = d * f + f + f * d + d;
  const Index embeddings = v * d + 2 * p * d + (Index(d_visual) * d + d);
  const Index encoder = n_enc_layers * (2 * norm + attention + ffn) + norm;
  const Index decoder = n_dec_layers * (3 * norm + 2 * attention + ffn) + norm;
  const Index heads = v                                          // lm_head bias
                      + (d * d + d) + (d * n_classes + n_classes)  // mrm
                      + (d * d + d) + (d * n_attr + n_attr)        // ap
                      + (2 * d * d + d) + (d * n_rel + n_rel);     // rp
  return embeddings + encoder + decoder + heads;
}

// ---------------------------------------------------------------------------
// Input assembly

AssembledInput assemble_input(const MultimodalExample& example, const Vocabulary& vocab,
                              const AssemblyOptions& options, int max_positions) {
  AssembledInput in;
  auto push = [&](int id, Segment seg) {
    in.encoder_ids.push_back(id);
    in.segments.push_back(seg);
  };

  int task_id = tok::caption;
  switch (options.mode) {
    case AssemblyMode::generation:
      if (!is_generation_task(example.task)) {
        throw ValidationError("example '" + example.source_id + "' has task '" +
                              std::string(task_name(example.task)) +
                              "', which is not a generation task");
      }
      task_id = task_token(example.task);
      break;
    case AssemblyMode::masked: task_id = tok::caption; break;
    case AssemblyMode::region: task_id = tok::region_caption; break;
  }
  push(task_id, Segment::task);
  push(tok::img, Segment::visual);
  for (std::size_t i = 0; i < example.rois.size(); ++i) {
    in.visual_slots.push_back(in.encoder_length());
    push(tok::img_feat, Segment::visual);
  }
  push(tok::img_end, Segment::visual);

  std::vector<int> text_positions;
  std::vector<int> text_ids;
  auto push_text_block = [&](int open, const std::string& text, int close) {
    push(open, Segment::text);
    for (int id : vocab.encode(text)) {
      if (!Vocabulary::is_reserved(id)) {
        text_positions.push_back(in.encoder_length());
        text_ids.push_back(id);
      }
      push(id, Segment::text);
    }
    push(close, Segment::text);
  };
  if (options.mode == AssemblyMode::generation && options.use_event && example.event_text) {
    push_text_block(tok::event, *example.event_text, tok::event_end);
  } else if (options.mode == AssemblyMode::masked) {
    push_text_block(tok::mlm, example.target_text, tok::mlm_end);
  }
  in.encoder_mask.assign(in.encoder_ids.size(), 1);

  if (options.mode == AssemblyMode::generation) {
    const auto target = vocab.encode(example.target_text);
    in.decoder_input.push_back(tok::bos);
    in.decoder_input.insert(in.decoder_input.end(), target.begin(), target.end());
    in.decoder_target = target;
    in.decoder_target.push_back(tok::eos);
  } else {
    in.decoder_input = in.encoder_ids;
    in.decoder_target.assign(in.encoder_ids.size(), tok::pad);
    if (options.mode == AssemblyMode::masked) {
      if (options.mask_text) {
        const auto plan = plan_mlm_mask(text_positions, text_ids, vocab, mix_seed(options.seed, 1));
        for (const auto& m : plan.text) {
          in.mlm_positions.push_back(m.position);
          in.mlm_original.push_back(in.encoder_ids[m.position]);
          in.decoder_target[m.position] = in.encoder_ids[m.position];
          in.encoder_ids[m.position] = m.replacement;
          in.decoder_input[m.position] = tok::cls;
        }
      }
      if (options.mask_regions) {
        const auto plan = plan_mrm_mask(static_cast<int>(example.rois.size()), mix_seed(options.seed, 2));
        in.mrm_regions = plan.regions;
        for (int r : plan.regions) in.decoder_input[in.visual_slots[r]] = tok::cls;
      }
    }
  }
  in.decoder_mask.assign(in.decoder_input.size(), 1);

  if (in.encoder_length() > max_positions || in.decoder_length() > max_positions) {
    throw LengthError("example '" + example.source_id + "' assembles to " +
                      std::to_string(in.encoder_length()) + " encoder / " +
                      std::to_string(in.decoder_length()) + " decoder positions, max_positions is " +
                      std::to_string(max_positions));
  }
  return in;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
Model<S>::Model(ModelConfig config, Init init, std::uint64_t seed, double init_std)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const bool zero = init == Init::zero;
  auto weight = [&](const std::string& name, Shape shape) {
    auto t = Tensor<S>::zeros(std::move(shape));
    if (!zero) {
      for (Index i = 0; i < t.numel(); ++i) t.data()[i] = S(rng.normal() * init_std);
    }
    params_.add(name, std::move(t), true);
  };
  auto bias = [&](const std::string& name, Index n) { params_.add(name, Tensor<S>::zeros({n}), false); };
  auto norm = [&](const std::string& name) {
    params_.add(name + ".gain", Tensor<S>::filled({config_.d_model}, zero ? S(0) : S(1)), false);
    bias(name + ".bias", config_.d_model);
  };
  auto dense = [&](const std::string& name, Index in, Index out) {
    weight(name + ".weight", {in, out});
    bias(name + ".bias", out);
  };
  auto attention = [&](const std::string& name) {
    for (const char* proj : {".q", ".k", ".v", ".out"}) dense(name + proj, config_.d_model, config_.d_model);
  };
  auto ffn = [&](const std::string& name) {
    dense(name + ".fc1", config_.d_model, config_.d_ffn);
    dense(name + ".fc2", config_.d_ffn, config_.d_model);
  };
  const Index d = config_.d_model;

  weight("embed.tokens", {config_.vocab_size, d});
  weight("embed.enc_positions", {config_.max_positions, d});
  weight("embed.dec_positions", {config_.max_positions, d});
  dense("visual.proj", config_.d_visual, d);
  for (int l = 0; l < config_.n_enc_layers; ++l) {
    const std::string prefix = "encoder.layers." + std::to_string(l);
    norm(prefix + ".self_attn_norm");
    attention(prefix + ".self_attn");
    norm(prefix + ".ffn_norm");
    ffn(prefix + ".ffn");
  }
  norm("encoder.final_norm");
  for (int l = 0; l < config_.n_dec_layers; ++l) {
    const std::string prefix = "decoder.layers." + std::to_string(l);
    norm(prefix + ".self_attn_norm");
    attention(prefix + ".self_attn");
    norm(prefix + ".cross_attn_norm");
    attention(prefix + ".cross_attn");
    norm(prefix + ".ffn_norm");
    ffn(prefix + ".ffn");
  }
  norm("decoder.final_norm");
  bias("lm_head.bias", config_.vocab_size);
  dense("mrm_head.fc1", d, d);
  dense("mrm_head.fc2", d, config_.n_classes);
  dense("ap_head.fc1", d, d);
  dense("ap_head.fc2", d, config_.n_attr);
  dense("rp_head.fc1", 2 * d, d);
  dense("rp_head.fc2", d, config_.n_rel);
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename S>
using Mask = typename Tensor<S>::Array;

template <typename S>
Mask<S> key_mask(Index queries, std::span<const std::uint8_t> keys, bool causal) {
  const Index n_keys = static_cast<Index>(keys.size());
  Mask<S> mask = Mask<S>::Zero(queries * n_keys);
  const S blocked = -std::numeric_limits<S>::infinity();
  for (Index q = 0; q < queries; ++q) {
    for (Index k = 0; k < n_keys; ++k) {
      if (keys[k] == 0 || (causal && k > q)) mask[q * n_keys + k] = blocked;
    }
  }
  return mask;
}

template <typename S>
Tensor<S> dense(Pass<S>& pass, const Model<S>& model, const std::string& name, const Tensor<S>& x) {
  return linear(pass.tape, x, model.p(name + ".weight"), model.p(name + ".bias"));
}

template <typename S>
Tensor<S> norm(Pass<S>& pass, const Model<S>& model, const std::string& name, const Tensor<S>& x) {
  return layer_norm(pass.tape, x, model.p(name + ".gain"), model.p(name + ".bias"));
}

template <typename S>
Tensor<S> drop(Pass<S>& pass, const Model<S>& model, const Tensor<S>& x) {
  return dropout(pass.tape, x, model.config().dropout_rate, pass.rng, pass.training);
}

template <typename S>
Tensor<S> attention(Pass<S>& pass, const Model<S>& model, const std::string& name,
                    const Tensor<S>& x, const Tensor<S>& context, const Mask<S>& mask) {
  auto& tape = pass.tape;
  const int heads = model.config().n_heads;
  const Index head_dim = model.config().d_model / heads;
  const S inv_scale = S(1) / std::sqrt(S(head_dim));
  const auto q = dense(pass, model, name + ".q", x);
  const auto k = dense(pass, model, name + ".k", context);
  const auto v = dense(pass, model, name + ".v", context);
  std::vector<Tensor<S>> outputs;
  for (int h = 0; h < heads; ++h) {
    const auto qh = slice_cols(tape, q, h * head_dim, head_dim);
    const auto kh = slice_cols(tape, k, h * head_dim, head_dim);
    const auto vh = slice_cols(tape, v, h * head_dim, head_dim);
    auto scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_scale);
    scores = add_constant(tape, scores, mask);
    outputs.push_back(matmul(tape, softmax(tape, scores), vh));
  }
  const auto merged = heads == 1 ? outputs.front() : concat_cols(tape, outputs);
  return dense(pass, model, name + ".out", merged);
}

template <typename S>
Tensor<S> feed_forward(Pass<S>& pass, const Model<S>& model, const std::string& name, const Tensor<S>& x) {
  return dense(pass, model, name + ".fc2", gelu(pass.tape, dense(pass, model, name + ".fc1", x)));
}

template <typename S>
Tensor<S> mlp_head(Pass<S>& pass, const Model<S>& model, const std::string& name, const Tensor<S>& x) {
  return dense(pass, model, name + ".fc2", gelu(pass.tape, dense(pass, model, name + ".fc1", x)));
}

std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

template <typename S>
Tensor<S> embed(Pass<S>& pass, const Model<S>& model, const AssembledInput& input,
                std::span<const RoIFeature> rois) {
  auto& tape = pass.tape;
  const auto& cfg = model.config();
  const int length = input.encoder_length();
  if (input.visual_slots.size() != rois.size()) {
    throw DimensionError("embed: " + std::to_string(input.visual_slots.size()) + " visual slots but " +
                         std::to_string(rois.size()) + " RoIs");
  }
  if (length > cfg.max_positions) {
    throw LengthError("embed: sequence of " + std::to_string(length) + " exceeds max_positions");
  }
  auto tokens = embedding_lookup(tape, model.p("embed.tokens"), input.encoder_ids);
  if (!rois.empty()) {
    const Index n = static_cast<Index>(rois.size());
    auto feats = Tensor<S>::zeros({n, cfg.d_visual});
    for (Index r = 0; r < n; ++r) {
      const auto& f = rois[r].feat;
      if (static_cast<int>(f.size()) != cfg.d_visual) {
        throw DimensionError("embed: RoI " + std::to_string(r) + " has " + std::to_string(f.size()) +
                             " features, model expects " + std::to_string(cfg.d_visual));
      }
      for (int c = 0; c < cfg.d_visual; ++c) feats.matrix()(r, c) = S(f[c]);
    }
    for (int r : input.mrm_regions) feats.matrix().row(r).setZero();
    const auto visual = dense(pass, model, "visual.proj", feats);
    std::vector<int> rows = iota(length);
    for (std::size_t i = 0; i < input.visual_slots.size(); ++i) {
      rows[input.visual_slots[i]] = length + static_cast<int>(i);
    }
    tokens = gather_rows(tape, concat_rows(tape, std::vector<Tensor<S>>{tokens, visual}), rows);
  }
  const auto positions = gather_rows(tape, model.p("embed.enc_positions"), iota(length));
  return drop(pass, model, add(tape, tokens, positions));
}

template <typename S>
Tensor<S> encode(Pass<S>& pass, const Model<S>& model, const Tensor<S>& embedded,
                 std::span<const std::uint8_t> mask) {
  auto& tape = pass.tape;
  if (static_cast<Index>(mask.size()) != embedded.rows()) {
    throw DimensionError("encode: mask length differs from sequence length");
  }
  const auto attn_mask = key_mask<S>(embedded.rows(), mask, false);
  Tensor<S> h = embedded;
  for (int l = 0; l < model.config().n_enc_layers; ++l) {
    const std::string prefix = "encoder.layers." + std::to_string(l);
    const auto normed = norm(pass, model, prefix + ".self_attn_norm", h);
    h = add(tape, h, drop(pass, model, attention(pass, model, prefix + ".self_attn", normed, normed, attn_mask)));
    h = add(tape, h, drop(pass, model, feed_forward(pass, model, prefix + ".ffn", norm(pass, model, prefix + ".ffn_norm", h))));
  }
  return norm(pass, model, "encoder.final_norm", h);
}

template <typename S>
Tensor<S> decode(Pass<S>& pass, const Model<S>& model, std::span<const int> decoder_ids,
                 std::span<const std::uint8_t> decoder_mask, const Tensor<S>& memory,
                 std::span<const std::uint8_t> memory_mask) {
  auto& tape = pass.tape;
  const int length = static_cast<int>(decoder_ids.size());
  if (length == 0) throw DimensionError("decode: empty decoder input");
  if (length > model.config().max_positions) {
    throw LengthError("decode: sequence of " + std::to_string(length) + " exceeds max_positions");
  }
  if (decoder_mask.size() != decoder_ids.size() || static_cast<Index>(memory_mask.size()) != memory.rows()) {
    throw DimensionError("decode: mask lengths differ from sequence lengths");
  }
  const auto self_mask = key_mask<S>(length, decoder_mask, true);
  const auto cross_mask = key_mask<S>(length, memory_mask, false);
  auto h = add(tape, embedding_lookup(tape, model.p("embed.tokens"), decoder_ids),
               gather_rows(tape, model.p("embed.dec_positions"), iota(length)));
  h = drop(pass, model, h);
  for (int l = 0; l < model.config().n_dec_layers; ++l) {
    const std::string prefix = "decoder.layers." + std::to_string(l);
    const auto normed = norm(pass, model, prefix + ".self_attn_norm", h);
    h = add(tape, h, drop(pass, model, attention(pass, model, prefix + ".self_attn", normed, normed, self_mask)));
    const auto query = norm(pass, model, prefix + ".cross_attn_norm", h);
    h = add(tape, h, drop(pass, model, attention(pass, model, prefix + ".cross_attn", query, memory, cross_mask)));
    h = add(tape, h, drop(pass, model, feed_forward(pass, model, prefix + ".ffn", norm(pass, model, prefix + ".ffn_norm", h))));
  }
  return norm(pass, model, "decoder.final_norm", h);
}

template <typename S>
Tensor<S> lm_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden) {
  auto& tape = pass.tape;
  return add_bias(tape, matmul(tape, hidden, transpose(tape, model.p("embed.tokens"))),
                  model.p("lm_head.bias"));
}

template <typename S>
Tensor<S> mrm_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden) {
  return mlp_head(pass, model, "mrm_head", hidden);
}

template <typename S>
Tensor<S> ap_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& hidden) {
  return mlp_head(pass, model, "ap_head", hidden);
}

template <typename S>
Tensor<S> rp_head(Pass<S>& pass, const Model<S>& model, const Tensor<S>& pair_hidden) {
  if (pair_hidden.cols() != 2 * model.config().d_model) {
    throw DimensionError("rp_head: input width " + std::to_string(pair_hidden.cols()) +
                         " is not 2 * d_model");
  }
  return mlp_head(pass, model, "rp_head", pair_hidden);
}

template <typename S>
ForwardOutput<S> forward(Pass<S>& pass, const Model<S>& model, const AssembledInput& input,
                         std::span<const RoIFeature> rois) {
  ForwardOutput<S> out;
  out.memory = encode(pass, model, embed(pass, model, input, rois), input.encoder_mask);
  out.hidden = decode(pass, model, input.decoder_input, input.decoder_mask, out.memory, input.encoder_mask);
  return out;
}

template class Model<float>;
template class Model<double>;

#define KMBART_INSTANTIATE_MODEL(S)                                                               \
  template Tensor<S> embed(Pass<S>&, const Model<S>&, const AssembledInput&,                      \
                           std::span<const RoIFeature>);                                          \
  template Tensor<S> encode(Pass<S>&, const Model<S>&, const Tensor<S>&,                          \
                            std::span<const std::uint8_t>);                                       \
  template Tensor<S> decode(Pass<S>&, const Model<S>&, std::span<const int>,                      \
                            std::span<const std::uint8_t>, const Tensor<S>&,                      \
                            std::span<const std::uint8_t>);                                       \
  template Tensor<S> lm_head(Pass<S>&, const Model<S>&, const Tensor<S>&);                        \
  template Tensor<S> mrm_head(Pass<S>&, const Model<S>&, const Tensor<S>&);                       \
  template Tensor<S> ap_head(Pass<S>&, const Model<S>&, const Tensor<S>&);                        \
  template Tensor<S> rp_head(Pass<S>&, const Model<S>&, const Tensor<S>&);                        \
  template ForwardOutput<S> forward(Pass<S>&, const Model<S>&, const AssembledInput&,             \
                                    std::span<const RoIFeature>);

KMBART_INSTANTIATE_MODEL(float)
KMBART_INSTANTIATE_MODEL(double)

#undef KMBART_INSTANTIATE_MODEL

}  // namespace kmbart
