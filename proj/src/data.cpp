#include "kmbart/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "kmbart/error.hpp"
#include "kmbart/losses.hpp"
#include "kmbart/rng.hpp"

namespace kmbart {
namespace {

using json = nlohmann::json;

constexpr float kProbabilityTolerance = 1e-4F;

std::vector<float> parse_floats(const json& value, std::size_t line, const std::string& field) {
  if (!value.is_array()) throw ParseError(line, field + " must be an array of numbers");
  std::vector<float> out;
  out.reserve(value.size());
  for (const auto& v : value) {
    if (!v.is_number()) throw ParseError(line, field + " must contain only numbers");
    out.push_back(v.get<float>());
  }
  return out;
}

int parse_index(const json& value, std::size_t line, const std::string& field) {
  if (!value.is_number_integer()) throw ParseError(line, field + " must be an integer");
  return value.get<int>();
}

void check_dim(std::optional<int>& known, int actual, std::size_t line, const std::string& field) {
  if (!known) known = actual;
  if (*known != actual) {
    throw ParseError(line, field + " has " + std::to_string(actual) + " entries, expected " +
                               std::to_string(*known));
  }
}

MultimodalExample parse_record(std::string_view text, std::size_t line, DatasetSchema& schema) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(line, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line, "record must be a JSON object");

  MultimodalExample ex;
  try {
    if (j.contains("relation") && !j["relation"].is_null()) {
      ex.relation = j["relation"].get<std::string>();
      try {
        ex.task = map_comet_relation(*ex.relation);
      } catch (const UnknownRelationError& e) {
        throw ParseError(line, e.what());
      }
      if (j.contains("task") && parse_task(j["task"].get<std::string>()) != ex.task) {
        throw ParseError(line, "task disagrees with relation '" + *ex.relation + "'");
      }
    } else if (j.contains("task")) {
      ex.task = parse_task(j["task"].get<std::string>());
    } else {
      throw ParseError(line, "missing field 'task'");
    }
    if (!j.contains("target") || !j["target"].is_string()) throw ParseError(line, "missing string field 'target'");
    ex.target_text = j["target"].get<std::string>();
    if (j.contains("event") && !j["event"].is_null()) ex.event_text = j["event"].get<std::string>();
    if (j.contains("source_id")) ex.source_id = j["source_id"].get<std::string>();
  } catch (const json::type_error& e) {
    throw ParseError(line, std::string("wrong field type: ") + e.what());
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    if (j.contains("source_id") && j["source_id"].is_string()) {
      msg += " (source_id '" + j["source_id"].get<std::string>() + "')";
    }
    throw ParseError(line, msg);
  }
  if (is_generation_task(ex.task) && split_words(ex.target_text).empty()) {
    throw ParseError(line, "target must be non-empty for task '" + std::string(task_name(ex.task)) + "'");
  }

  if (j.contains("rois")) {
    const auto& rois = j["rois"];
    if (!rois.is_array()) throw ParseError(line, "rois must be an array");
    for (std::size_t i = 0; i < rois.size(); ++i) {
      const std::string field = "rois[" + std::to_string(i) + "]";
      const auto& r = rois[i];
      if (!r.is_object() || !r.contains("feat") || !r.contains("class_probs")) {
        throw ParseError(line, field + " needs 'feat' and 'class_probs'");
      }
      RoIFeature roi;
      roi.feat = parse_floats(r["feat"], line, field + ".feat");
      roi.class_probs = parse_floats(r["class_probs"], line, field + ".class_probs");
      check_dim(schema.d_visual, static_cast<int>(roi.feat.size()), line, field + ".feat");
      check_dim(schema.n_classes, static_cast<int>(roi.class_probs.size()), line, field + ".class_probs");
      double total = 0.0;
      for (float p : roi.class_probs) {
        if (!(p >= 0.0F) || !std::isfinite(p)) throw ParseError(line, field + ".class_probs has a negative or non-finite entry");
        total += p;
      }
      if (std::abs(total - 1.0) > kProbabilityTolerance) {
        std::ostringstream msg;
        msg << field << ".class_probs sums to " << total << ", expected 1 within " << kProbabilityTolerance;
        throw ParseError(line, msg.str());
      }
      for (float f : roi.feat) {
        if (!std::isfinite(f)) throw ParseError(line, field + ".feat has a non-finite entry");
      }
      ex.rois.push_back(std::move(roi));
    }
  }
  const int n = static_cast<int>(ex.rois.size());
  auto check_roi = [&](int idx, const std::string& field) {
    if (idx < 0 || idx >= n) {
      throw ParseError(line, field + " refers to RoI " + std::to_string(idx) + " but the record has " +
                                 std::to_string(n));
    }
  };
  auto check_label = [&](int label, const std::optional<int>& limit, const std::string& field) {
    if (label < 0 || (limit && label >= *limit)) {
      throw ParseError(line, field + " label " + std::to_string(label) + " is out of range");
    }
  };
  if (j.contains("attributes")) {
    const auto& attrs = j["attributes"];
    if (!attrs.is_array()) throw ParseError(line, "attributes must be an array");
    for (std::size_t i = 0; i < attrs.size(); ++i) {
      const std::string field = "attributes[" + std::to_string(i) + "]";
      if (!attrs[i].is_array() || attrs[i].size() != 2) throw ParseError(line, field + " must be [roi_idx, attr_label]");
      AttributeLabel a{parse_index(attrs[i][0], line, field), parse_index(attrs[i][1], line, field)};
      check_roi(a.roi, field);
      check_label(a.label, schema.n_attr, field);
      ex.attributes.push_back(a);
    }
  }
  if (j.contains("relations")) {
    const auto& rels = j["relations"];
    if (!rels.is_array()) throw ParseError(line, "relations must be an array");
    for (std::size_t i = 0; i < rels.size(); ++i) {
      const std::string field = "relations[" + std::to_string(i) + "]";
      if (!rels[i].is_array() || rels[i].size() != 3) {
        throw ParseError(line, field + " must be [subj_idx, obj_idx, rel_label]");
      }
      RelationLabel r{parse_index(rels[i][0], line, field), parse_index(rels[i][1], line, field),
                      parse_index(rels[i][2], line, field)};
      check_roi(r.subject, field);
      check_roi(r.object, field);
      if (r.subject == r.object) throw ParseError(line, field + " relates a RoI to itself");
      check_label(r.label, schema.n_rel, field);
      ex.relations.push_back(r);
    }
  }
  return ex;
}

}  // namespace

MultimodalExample parse_example(std::string_view line, std::size_t line_number,
                                const DatasetSchema& schema) {
  DatasetSchema local = schema;
  return parse_record(line, line_number, local);
}

std::vector<MultimodalExample> parse_jsonl(std::string_view text, const DatasetSchema& schema) {
  DatasetSchema local = schema;
  std::vector<MultimodalExample> out;
  std::size_t line_number = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_number;
    const auto line = text.substr(start, end - start);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      out.push_back(parse_record(line, line_number, local));
    }
    start = end + 1;
  }
  return out;
}

std::vector<MultimodalExample> load_jsonl(const std::filesystem::path& path, const DatasetSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_jsonl(buffer.str(), schema);
}

nlohmann::ordered_json example_to_json(const MultimodalExample& example) {
  nlohmann::ordered_json j;
  j["task"] = std::string(task_name(example.task));
  if (example.relation) j["relation"] = *example.relation;
  if (example.event_text) j["event"] = *example.event_text;
  j["target"] = example.target_text;
  j["rois"] = nlohmann::ordered_json::array();
  for (const auto& r : example.rois) {
    j["rois"].push_back({{"feat", r.feat}, {"class_probs", r.class_probs}});
  }
  j["attributes"] = nlohmann::ordered_json::array();
  for (const auto& a : example.attributes) j["attributes"].push_back({a.roi, a.label});
  j["relations"] = nlohmann::ordered_json::array();
  for (const auto& r : example.relations) j["relations"].push_back({r.subject, r.object, r.label});
  j["source_id"] = example.source_id;
  return j;
}

std::string to_jsonl(std::span<const MultimodalExample> examples) {
  std::string out;
  for (const auto& e : examples) {
    out += example_to_json(e).dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const MultimodalExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_jsonl(examples);
}

TaskType map_comet_relation(std::string_view relation) {
  if (relation == "xIntent" || relation == "xWant") return TaskType::intent;
  if (relation == "xNeed") return TaskType::before;
  if (relation == "xReact" || relation == "xEffect") return TaskType::after;
  throw UnknownRelationError(std::string(relation));
}

ScoredExample score_description(const Model<float>& model, const Vocabulary& vocab,
                                const MultimodalExample& example, bool use_event) {
  if (split_words(example.target_text).empty()) {
    throw EmptyLossError("example '" + example.source_id + "' has an empty target");
  }
  AssemblyOptions options;
  options.mode = AssemblyMode::generation;
  options.use_event = use_event;
  const auto input = assemble_input(example, vocab, options, model.config().max_positions);
  Tape<float> tape(false);
  Pass<float> pass{tape, false, nullptr};
  const auto out = forward(pass, model, input, example.rois);
  const float ce = loss_kcg(pass, model, out.hidden, input.decoder_target).item();
  return {example, ce};
}

std::vector<ScoredExample> score_dataset(const Model<float>& model, const Vocabulary& vocab,
                                         std::span<const MultimodalExample> examples,
                                         bool use_event, int threads) {
  std::vector<ScoredExample> out(examples.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(examples.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < examples.size(); ++i) out[i] = score_description(model, vocab, examples[i], use_event);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < examples.size(); i += workers) {
          out[i] = score_description(model, vocab, examples[i], use_event);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

FilterResult filter_dataset(std::span<const ScoredExample> scored, float threshold) {
  if (std::isnan(threshold)) throw ValidationError("filter threshold must not be NaN");
  FilterResult result;
  for (const auto& s : scored) {
    (s.avg_ce < threshold ? result.kept : result.dropped).push_back(s);
  }
  return result;
}

nlohmann::ordered_json scored_to_json(const ScoredExample& scored) {
  auto j = example_to_json(scored.example);
  j["avg_ce"] = scored.avg_ce;
  return j;
}

std::string to_jsonl(std::span<const ScoredExample> scored) {
  std::string out;
  for (const auto& s : scored) {
    out += scored_to_json(s).dump();
    out += '\n';
  }
  return out;
}

nlohmann::ordered_json filter_report(std::span<const ScoredExample> kept,
                                     std::span<const ScoredExample> dropped,
                                     std::optional<float> threshold) {
  const std::size_t total = kept.size() + dropped.size();
  std::vector<long> counts(kHistogramBins, 0);
  long overflow = 0;
  const double width = static_cast<double>(kHistogramMax) / kHistogramBins;
  auto bin = [&](const ScoredExample& s) {
    if (s.avg_ce >= kHistogramMax) {
      ++overflow;
      return;
    }
    const int b = std::clamp(static_cast<int>(static_cast<double>(s.avg_ce) / width), 0, kHistogramBins - 1);
    ++counts[b];
  };
  for (const auto& s : kept) bin(s);
  for (const auto& s : dropped) bin(s);

  nlohmann::ordered_json report;
  report["n_before"] = total;
  report["n_kept"] = kept.size();
  report["n_dropped"] = dropped.size();
  report["keep_ratio"] = total == 0 ? 0.0 : static_cast<double>(kept.size()) / static_cast<double>(total);
  if (threshold) report["threshold"] = *threshold;
  report["histogram"] = {{"min", 0.0}, {"max", kHistogramMax}, {"bin_width", width},
                         {"counts", counts}, {"overflow", overflow}};
  return report;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(seed);
    for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const auto end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<AssembledInput> pad_batch(std::vector<AssembledInput> inputs, int pad_id) {
  std::size_t enc = 0, dec = 0;
  for (const auto& in : inputs) {
    enc = std::max(enc, in.encoder_ids.size());
    dec = std::max(dec, in.decoder_input.size());
  }
  for (auto& in : inputs) {
    in.encoder_ids.resize(enc, pad_id);
    in.segments.resize(enc, Segment::pad);
    in.encoder_mask.resize(enc, 0);
    in.decoder_input.resize(dec, pad_id);
    in.decoder_target.resize(dec, tok::pad);
    in.decoder_mask.resize(dec, 0);
  }
  return inputs;
}

std::vector<PaddedBatch> make_batches(std::span<const AssembledInput> inputs, std::size_t batch_size,
                                      int pad_id, std::uint64_t seed, bool shuffle) {
  std::vector<PaddedBatch> out;
  for (auto& idx : batch_indices(inputs.size(), batch_size, seed, shuffle)) {
    std::vector<AssembledInput> members;
    for (auto i : idx) members.push_back(inputs[i]);
    out.push_back({std::move(idx), pad_batch(std::move(members), pad_id)});
  }
  return out;
}

std::vector<std::string> corpus_sentences(std::span<const MultimodalExample> examples) {
  std::vector<std::string> out;
  for (const auto& e : examples) {
    if (e.event_text) out.push_back(*e.event_text);
    out.push_back(e.target_text);
  }
  return out;
}

}  // namespace kmbart
