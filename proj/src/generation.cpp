#include "kmbart/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kmbart/error.hpp"

namespace kmbart {

void GenerationConfig::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must be in (0, 1]");
  if (max_len < 1) throw ValidationError("max_len must be >= 1");
  if (num_samples < 1) throw ValidationError("num_samples must be >= 1");
}

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "greedy") return DecodeMode::greedy;
  if (name == "nucleus") return DecodeMode::nucleus;
  throw ValidationError("unknown decoding mode '" + std::string(name) + "'");
}

std::string_view decode_mode_name(DecodeMode mode) {
  return mode == DecodeMode::greedy ? "greedy" : "nucleus";
}

std::vector<NucleusCandidate> nucleus_candidates(std::span<const double> probs, double top_p) {
  if (probs.empty()) throw DimensionError("nucleus over an empty distribution");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must be in (0, 1]");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  std::vector<NucleusCandidate> out;
  double mass = 0.0;
  for (int id : order) {
    if (probs[id] <= 0.0) break;
    out.push_back({id, probs[id]});
    mass += probs[id];
    if (mass + 1e-9 >= top_p) break;
  }
  if (out.empty()) throw ValidationError("nucleus over a distribution with no mass");
  for (auto& c : out) c.prob /= mass;
  return out;
}

int sample_nucleus(std::span<const double> probs, double top_p, Rng& rng) {
  const auto candidates = nucleus_candidates(probs, top_p);
  const double u = rng.uniform();
  double cum = 0.0;
  for (const auto& c : candidates) {
    cum += c.prob;
    if (u < cum) return c.id;
  }
  return candidates.back().id;
}

int greedy_pick(std::span<const double> probs) {
  if (probs.empty()) throw DimensionError("argmax over an empty distribution");
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

std::vector<double> generation_distribution(std::span<const float> logits) {
  std::vector<double> p(logits.size(), 0.0);
  double max = -INFINITY;
  auto allowed = [](std::size_t id) { return id == tok::eos || id >= tok::reserved_count; };
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed(i)) max = std::max(max, static_cast<double>(logits[i]));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (allowed(i)) total += p[i] = std::exp(static_cast<double>(logits[i]) - max);
  }
  for (auto& v : p) v /= total;
  return p;
}

std::vector<std::vector<int>> generate(const Model<float>& model, const Vocabulary& vocab,
                                       const MultimodalExample& example, const GenerationConfig& config) {
  config.validate();
  if (!is_generation_task(example.task)) {
    throw ValidationError("cannot generate for task '" + std::string(task_name(example.task)) + "' (" +
                          example.source_id + ")");
  }
  // Assembly needs a target; the decoder side is rebuilt step by step.
  MultimodalExample prompt = example;
  prompt.target_text.clear();
  AssemblyOptions options;
  options.use_event = config.use_event;
  const auto input = assemble_input(prompt, vocab, options, model.config().max_positions);

  Tape<float> tape(false);
  Pass<float> pass{tape, false, nullptr};
  const auto memory = encode(pass, model, embed(pass, model, input, example.rois), input.encoder_mask);
  const int max_len = std::min(config.max_len, model.config().max_positions - 1);

  auto decode_one = [&](Rng* rng) {
    std::vector<int> ids{tok::bos};
    std::vector<std::uint8_t> mask{1};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
      const auto hidden = decode(pass, model, ids, mask, memory, input.encoder_mask);
      const auto last = slice_rows(tape, hidden, hidden.rows() - 1, 1);
      const auto logits = lm_head(pass, model, last);
      const auto probs = generation_distribution({logits.data().data(), static_cast<std::size_t>(logits.numel())});
      const int next = rng ? sample_nucleus(probs, config.top_p, *rng) : greedy_pick(probs);
      if (next == tok::eos) break;
      out.push_back(next);
      ids.push_back(next);
      mask.push_back(1);
    }
    return out;
  };

  std::vector<std::vector<int>> samples;
  if (config.mode == DecodeMode::greedy) {
    samples.assign(config.num_samples, decode_one(nullptr));
  } else {
    for (int k = 0; k < config.num_samples; ++k) {
      Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(k)));
      samples.push_back(decode_one(&rng));
    }
  }
  return samples;
}

}  // namespace kmbart
