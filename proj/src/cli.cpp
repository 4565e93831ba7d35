#include "kmbart/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "kmbart/checkpoint.hpp"
#include "kmbart/config.hpp"
#include "kmbart/data.hpp"
#include "kmbart/error.hpp"
#include "kmbart/generation.hpp"
#include "kmbart/metrics.hpp"
#include "kmbart/synthetic.hpp"
#include "kmbart/train.hpp"
#include "kmbart/vocab.hpp"

namespace kmbart {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

bool parse_bool(const std::string& text, const std::string& flag) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw UsageError(flag + " expects true or false, got '" + text + "'");
}

// Replay record written next to every output.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) {
    doc_["command"] = std::move(command);
    doc_["argv"] = args;
    doc_["inputs"] = ojson::object();
  }
  void input(const std::string& path) {
    if (!path.empty()) doc_["inputs"][path] = fnv1a_hex(read_file(path));
  }
  void set(const std::string& key, ojson value) { doc_[key] = std::move(value); }
  void write(const fs::path& path) const { write_file(path, doc_.dump(2) + "\n"); }

 private:
  ojson doc_;
};

fs::path sidecar(const fs::path& output, const char* suffix) {
  return output.string() + suffix;
}

// Flags shared by pretrain and finetune; unset ones leave the config alone.
struct TrainFlags {
  std::string config;
  std::string preset = "desk";
  std::map<std::string, std::string> overrides;
};

void add_override(CLI::App* app, TrainFlags& flags, const std::string& flag, const std::string& dotted,
                  const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&flags, dotted](const std::string& v) { flags.overrides[dotted] = v; }, help);
}

// Accepts "--a.b=value" and "--a.b value" leftovers as dotted overrides.
void collect_dotted(const std::vector<std::string>& extras, TrainFlags& flags) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos) {
      throw UsageError("unrecognized argument '" + arg + "'");
    }
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      flags.overrides[arg.substr(2, eq - 2)] = arg.substr(eq + 1);
    } else {
      if (i + 1 >= extras.size()) throw UsageError(arg + " needs a value");
      flags.overrides[arg.substr(2)] = extras[++i];
    }
  }
}

RunConfig resolve_config(const TrainFlags& flags) {
  RunConfig base = RunConfig::preset(flags.preset);
  if (!flags.config.empty()) base = load_run_config(flags.config, base);
  json j = json::parse(to_json(base).dump());
  for (const auto& [key, value] : flags.overrides) {
    if (key == "use_event") parse_bool(value, "--use-event");
    apply_override(j, key, value);
  }
  RunConfig config = run_config_from_json(j, base);
  config.validate();
  return config;
}

Vocabulary vocab_for(const RunConfig& config, std::span<const MultimodalExample> train, const fs::path& out_dir) {
  if (!config.paths.vocab.empty()) return Vocabulary::load(config.paths.vocab);
  const auto sentences = corpus_sentences(train);
  auto vocab = Vocabulary::build(sentences, 1);
  vocab.save(out_dir / "vocab.txt");
  return vocab;
}

DatasetSchema schema_of(const ModelConfig& m) { return {m.d_visual, m.n_classes, m.n_attr, m.n_rel}; }

int cmd_train(TrainMode mode, const TrainFlags& flags, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig config = resolve_config(flags);
  if (config.paths.train.empty()) throw UsageError("--train is required");
  if (config.paths.output.empty()) throw UsageError("--out is required");
  const fs::path out_dir = config.paths.output;
  fs::create_directories(out_dir);

  const auto schema = schema_of(config.model);
  const auto train = load_jsonl(config.paths.train, schema);
  std::vector<MultimodalExample> validation;
  if (!config.paths.validation.empty()) validation = load_jsonl(config.paths.validation, schema);
  const auto vocab = vocab_for(config, train, out_dir);

  std::optional<Checkpoint> init;
  if (!config.paths.init_checkpoint.empty()) init = load_checkpoint(config.paths.init_checkpoint);

  Trainer trainer(config, mode, vocab, init ? &*init : nullptr);
  std::ofstream steps(out_dir / "loss_log.jsonl", std::ios::binary);
  std::ofstream epochs(out_dir / "epochs.jsonl", std::ios::binary);
  if (!steps || !epochs) throw IoError("cannot write logs in " + out_dir.string());

  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { steps << to_json(r).dump() << '\n'; };
  hooks.on_epoch = [&](const EpochRecord& r) {
    epochs << to_json(r).dump() << '\n';
    save_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(r.epoch) + ".kmbt"), trainer.checkpoint());
    out << (mode == TrainMode::pretrain ? "pretrain" : "finetune") << " epoch " << r.epoch << ": " << r.steps
        << " steps";
    if (r.validation_kcg) out << ", validation kcg " << *r.validation_kcg;
    out << '\n';
  };
  trainer.run(train, validation, hooks);
  save_checkpoint(out_dir / "final.kmbt", trainer.checkpoint());

  auto resolved = to_json(trainer.config());
  resolved["dropout_rate"] = trainer.dropout_rate();
  write_file(out_dir / "config.json", resolved.dump(2) + "\n");
  Manifest manifest(mode == TrainMode::pretrain ? "pretrain" : "finetune", args);
  manifest.set("config_hash", config_hash(trainer.config()));
  manifest.set("seed", trainer.config().schedule.seed);
  manifest.input(config.paths.train);
  manifest.input(config.paths.validation);
  manifest.input(config.paths.vocab);
  manifest.input(config.paths.init_checkpoint);
  manifest.set("global_step", trainer.global_step());
  manifest.write(out_dir / "manifest.json");
  return kExitOk;
}

struct LoadedModel {
  RunConfig config;
  Model<float> model;
};

LoadedModel load_model(const std::string& path) {
  const auto ckpt = load_checkpoint(path);
  RunConfig config = ckpt.run_config();
  config.model.dropout_rate = 0.0;
  LoadedModel loaded{config, Model<float>(config.model, Init::zero)};
  apply_checkpoint(ckpt, loaded.model);
  return loaded;
}

Vocabulary vocab_from(const std::string& flag_value, const RunConfig& config) {
  const auto& path = flag_value.empty() ? config.paths.vocab : flag_value;
  if (path.empty()) throw UsageError("--vocab is required");
  auto vocab = Vocabulary::load(path);
  if (vocab.size() != config.model.vocab_size) {
    throw ValidationError("vocabulary " + path + " has " + std::to_string(vocab.size()) +
                          " tokens, checkpoint expects " + std::to_string(config.model.vocab_size));
  }
  return vocab;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal commonsense generation: pretraining, finetuning, filtering, decoding, evaluation",
               "kmbart"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "kmbart 1.0.0");

  // build-vocab
  std::vector<std::string> vocab_inputs;
  int min_freq = 1;
  std::string vocab_out;
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from JSONL datasets or text files");
  build_vocab->add_option("--input,-i", vocab_inputs, "JSONL dataset (events and targets) or text file")
      ->required();
  build_vocab->add_option("--min-freq", min_freq, "Minimum word count")->check(CLI::PositiveNumber);
  build_vocab->add_option("--out,-o", vocab_out, "Output vocabulary file")->required();

  // pretrain / finetune
  TrainFlags train_flags;
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--config", train_flags.config, "Run config JSON");
    sub->add_option("--preset", train_flags.preset, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));
    add_override(sub, train_flags, "--seed", "schedule.seed", "Random seed");
    add_override(sub, train_flags, "--epochs", "schedule.epochs", "Epoch count");
    add_override(sub, train_flags, "--batch-size", "schedule.batch_size", "Batch size");
    add_override(sub, train_flags, "--lr", "optimizer.lr", "Learning rate");
    add_override(sub, train_flags, "--dropout", "dropout_rate", "Dropout rate");
    add_override(sub, train_flags, "--threads", "threads", "Worker threads");
    add_override(sub, train_flags, "--use-event", "use_event", "true|false");
    add_override(sub, train_flags, "--train", "paths.train", "Training JSONL");
    add_override(sub, train_flags, "--validation", "paths.validation", "Validation JSONL");
    add_override(sub, train_flags, "--vocab", "paths.vocab", "Vocabulary file (built from --train if absent)");
    add_override(sub, train_flags, "--out", "paths.output", "Output directory");
    add_override(sub, train_flags, "--init", "paths.init_checkpoint", "Initial checkpoint");
    sub->allow_extras();
    sub->footer("Any config field can be set with --<dotted.name>=<value>, e.g. --model.d_model=64");
  };
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain on the active objectives");
  add_train_flags(pretrain);
  add_override(pretrain, train_flags, "--tasks", "tasks", "Active objectives, e.g. kcg,ap,rp,mlm,mrm");
  add_override(pretrain, train_flags, "--interleave", "interleave", "round-robin|joint");
  auto* finetune = app.add_subcommand("finetune", "Finetune on commonsense generation (KCG objective)");
  add_train_flags(finetune);

  // filter
  std::string scorer, candidates, kept_out, dropped_out, report_out, filter_vocab;
  float threshold = kDefaultFilterThreshold;
  int filter_threads = 1;
  std::string filter_use_event = "true";
  auto* filter = app.add_subcommand("filter", "Score candidate descriptions and keep those below a CE threshold");
  filter->add_option("--checkpoint", scorer, "Scorer checkpoint")->required();
  filter->add_option("--vocab", filter_vocab, "Vocabulary file");
  filter->add_option("--candidates", candidates, "Candidate JSONL")->required();
  filter->add_option("--threshold", threshold, "Keep avg CE strictly below this (nats)");
  filter->add_option("--kept", kept_out, "Kept output JSONL")->required();
  filter->add_option("--dropped", dropped_out, "Dropped output JSONL")->required();
  filter->add_option("--report", report_out, "Report JSON")->required();
  filter->add_option("--threads", filter_threads, "Scoring threads")->check(CLI::PositiveNumber);
  filter->add_option("--use-event", filter_use_event, "true|false");

  // generate
  std::string gen_ckpt, gen_vocab, gen_data, gen_out, gen_mode = "greedy", gen_use_event = "true";
  GenerationConfig gen;
  auto* generate_cmd = app.add_subcommand("generate", "Decode inferences for a dataset");
  generate_cmd->add_option("--checkpoint", gen_ckpt, "Model checkpoint")->required();
  generate_cmd->add_option("--vocab", gen_vocab, "Vocabulary file");
  generate_cmd->add_option("--data", gen_data, "Dataset JSONL")->required();
  generate_cmd->add_option("--out,-o", gen_out, "Generations JSONL")->required();
  generate_cmd->add_option("--mode", gen_mode, "greedy|nucleus")->check(CLI::IsMember({"greedy", "nucleus"}));
  generate_cmd->add_option("--top-p", gen.top_p, "Nucleus mass");
  generate_cmd->add_option("--num-samples", gen.num_samples, "Samples per example (nucleus)");
  generate_cmd->add_option("--max-len", gen.max_len, "Maximum generated tokens");
  generate_cmd->add_option("--seed", gen.seed, "Sampling seed");
  generate_cmd->add_option("--use-event", gen_use_event, "true|false");

  // evaluate
  std::string eval_gen, eval_refs, eval_train, eval_out, unique_mode = "exactly-once";
  bool group_by_task = false;
  auto* evaluate = app.add_subcommand("evaluate", "BLEU-2, CIDEr-D, Unique and Novel for generations");
  evaluate->add_option("--generations", eval_gen, "Generations JSONL")->required();
  evaluate->add_option("--references", eval_refs, "Reference dataset JSONL")->required();
  evaluate->add_option("--training", eval_train, "Training dataset JSONL for Novel");
  evaluate->add_flag("--group-by-task", group_by_task, "Also report before/after/intent and their mean");
  evaluate->add_option("--unique-mode", unique_mode, "exactly-once|distinct")
      ->check(CLI::IsMember({"exactly-once", "distinct"}));
  evaluate->add_option("--out,-o", eval_out, "Metrics JSON (stdout if absent)");

  // inspect-checkpoint
  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header and tensor table");
  inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required();

  // make-synthetic
  SyntheticOptions syn;
  std::string syn_out, syn_tasks;
  auto* synthetic = app.add_subcommand("make-synthetic", "Write a templated synthetic corpus");
  synthetic->add_option("--out,-o", syn_out, "Output JSONL")->required();
  synthetic->add_option("--count,-n", syn.n_examples, "Number of examples");
  synthetic->add_option("--seed", syn.seed, "Seed");
  synthetic->add_option("--d-visual", syn.d_visual, "RoI feature width");
  synthetic->add_option("--n-classes", syn.n_classes, "Detector classes");
  synthetic->add_option("--n-attr", syn.n_attr, "Attribute labels");
  synthetic->add_option("--n-rel", syn.n_rel, "Relation labels");
  synthetic->add_option("--max-rois", syn.max_rois, "Maximum RoIs per example");
  synthetic->add_option("--tasks", syn_tasks, "Comma-separated task names, cycled over examples");
  synthetic->add_flag("--comet", syn.comet_relations, "Tag generation examples with COMET relations");

  std::vector<std::string> argv_store{"kmbart"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*build_vocab) {
      std::vector<std::string> sentences;
      Manifest manifest("build-vocab", args);
      for (const auto& path : vocab_inputs) {
        if (fs::path(path).extension() == ".jsonl") {
          const auto examples = load_jsonl(path);
          const auto s = corpus_sentences(examples);
          sentences.insert(sentences.end(), s.begin(), s.end());
        } else {
          std::istringstream in(read_file(path));
          for (std::string line; std::getline(in, line);) sentences.push_back(line);
        }
        manifest.input(path);
      }
      const auto vocab = Vocabulary::build(sentences, min_freq);
      if (fs::path(vocab_out).has_parent_path()) fs::create_directories(fs::path(vocab_out).parent_path());
      vocab.save(vocab_out);
      manifest.set("min_freq", min_freq);
      manifest.write(sidecar(vocab_out, ".manifest.json"));
      out << "wrote " << vocab.size() << " tokens to " << vocab_out << '\n';
    } else if (*pretrain || *finetune) {
      collect_dotted((*pretrain ? pretrain : finetune)->remaining(), train_flags);
      return cmd_train(*pretrain ? TrainMode::pretrain : TrainMode::finetune, train_flags, args, out);
    } else if (*filter) {
      const bool use_event = parse_bool(filter_use_event, "--use-event");
      auto loaded = load_model(scorer);
      const auto vocab = vocab_from(filter_vocab, loaded.config);
      const auto examples = load_jsonl(candidates, schema_of(loaded.config.model));
      const auto scored = score_dataset(loaded.model, vocab, examples, use_event, filter_threads);
      const auto result = filter_dataset(scored, threshold);
      write_file(kept_out, to_jsonl(result.kept));
      write_file(dropped_out, to_jsonl(result.dropped));
      const auto report = filter_report(result.kept, result.dropped, threshold);
      write_file(report_out, report.dump(2) + "\n");
      Manifest manifest("filter", args);
      manifest.input(scorer);
      manifest.input(candidates);
      manifest.set("threshold", threshold);
      manifest.write(sidecar(report_out, ".manifest.json"));
      out << "kept " << result.kept.size() << " of " << scored.size() << " candidates\n";
    } else if (*generate_cmd) {
      gen.mode = parse_decode_mode(gen_mode);
      gen.use_event = parse_bool(gen_use_event, "--use-event");
      if (gen.mode == DecodeMode::greedy) gen.num_samples = 1;
      gen.validate();
      auto loaded = load_model(gen_ckpt);
      const auto vocab = vocab_from(gen_vocab, loaded.config);
      const auto examples = load_jsonl(gen_data, schema_of(loaded.config.model));
      std::string text = ojson{{"header",
                                {{"seed", gen.seed},
                                 {"mode", decode_mode_name(gen.mode)},
                                 {"top_p", gen.top_p},
                                 {"num_samples", gen.num_samples},
                                 {"max_len", gen.max_len},
                                 {"use_event", gen.use_event}}}}
                             .dump() +
                         "\n";
      for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        if (!is_generation_task(ex.task)) {
          throw ValidationError("example '" + ex.source_id + "' has task '" + std::string(task_name(ex.task)) +
                                "', which cannot be generated");
        }
        GenerationConfig per = gen;
        per.seed = mix_seed(gen.seed, i);
        ojson line;
        line["source_id"] = ex.source_id;
        line["task"] = std::string(task_name(ex.task));
        line["generations"] = ojson::array();
        for (const auto& ids : generate(loaded.model, vocab, ex, per)) line["generations"].push_back(vocab.decode(ids));
        text += line.dump() + "\n";
      }
      write_file(gen_out, text);
      Manifest manifest("generate", args);
      manifest.input(gen_ckpt);
      manifest.input(gen_data);
      manifest.set("seed", gen.seed);
      manifest.write(sidecar(gen_out, ".manifest.json"));
      out << "wrote generations for " << examples.size() << " examples to " << gen_out << '\n';
    } else if (*evaluate) {
      std::map<std::pair<std::string, std::string>, std::vector<std::string>> refs;
      for (const auto& ex : load_jsonl(eval_refs)) {
        refs[{ex.source_id, std::string(task_name(ex.task))}].push_back(ex.target_text);
      }
      std::unordered_set<std::string> training;
      if (!eval_train.empty()) {
        std::vector<std::string> targets;
        for (const auto& ex : load_jsonl(eval_train)) targets.push_back(ex.target_text);
        training = sentence_set(targets);
      }
      std::map<std::string, std::vector<EvalItem>> by_task;
      std::vector<EvalItem> all;
      std::istringstream in(read_file(eval_gen));
      std::size_t line_no = 0;
      for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::parse_error& e) {
          throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
        }
        if (j.contains("header")) continue;
        const auto id = j.at("source_id").get<std::string>();
        const auto task = j.at("task").get<std::string>();
        const auto it = refs.find({id, task});
        if (it == refs.end()) {
          throw ValidationError("source_id '" + id + "' (task " + task + ") has no reference in " + eval_refs);
        }
        EvalItem item{j.at("generations").get<std::vector<std::string>>(), it->second};
        by_task[task].push_back(item);
        all.push_back(std::move(item));
      }
      if (all.empty()) throw ValidationError("no generations in " + eval_gen);
      const auto mode = unique_mode == "distinct" ? UniqueMode::distinct : UniqueMode::exactly_once;
      auto metrics = [&](std::span<const EvalItem> items) {
        std::vector<std::string> generated;
        for (const auto& item : items) generated.insert(generated.end(), item.hypotheses.begin(), item.hypotheses.end());
        return ojson{{"bleu2", bleu2(items)},
                     {"cider", cider_d(items)},
                     {"unique", unique_metric(generated, mode)},
                     {"novel", novel_metric(generated, training)},
                     {"n_examples", items.size()}};
      };
      ojson report = metrics(all);
      if (group_by_task) {
        ojson groups = ojson::object();
        ojson total = {{"bleu2", 0.0}, {"cider", 0.0}, {"unique", 0.0}, {"novel", 0.0}};
        int present = 0;
        for (const char* task : {"before", "after", "intent"}) {
          const auto it = by_task.find(task);
          if (it == by_task.end()) continue;
          groups[task] = metrics(it->second);
          for (const char* m : {"bleu2", "cider", "unique", "novel"}) {
            total[m] = total[m].get<double>() + groups[task][m].get<double>();
          }
          ++present;
        }
        if (present > 0) {
          for (const char* m : {"bleu2", "cider", "unique", "novel"}) total[m] = total[m].get<double>() / present;
          total["n_tasks"] = present;
          groups["total"] = total;
        }
        report["by_task"] = groups;
      }
      const auto text = report.dump(2) + "\n";
      if (eval_out.empty()) {
        out << text;
      } else {
        write_file(eval_out, text);
        Manifest manifest("evaluate", args);
        manifest.input(eval_gen);
        manifest.input(eval_refs);
        manifest.input(eval_train);
        manifest.write(sidecar(eval_out, ".manifest.json"));
      }
    } else if (*inspect) {
      const auto ckpt = load_checkpoint(inspect_path);
      ojson doc;
      doc["header"] = ckpt.header;
      doc["parameter_count"] = ckpt.model_config().parameter_count();
      doc["tensors"] = ojson::array();
      for (const auto& t : ckpt.tensors) {
        doc["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"numel", t.data.size()}});
      }
      out << doc.dump(2) << '\n';
    } else if (*synthetic) {
      if (!syn_tasks.empty()) {
        syn.tasks.clear();
        std::stringstream list(syn_tasks);
        for (std::string name; std::getline(list, name, ',');) syn.tasks.push_back(parse_task(name));
      }
      const auto examples = make_synthetic(syn);
      write_jsonl(syn_out, examples);
      Manifest manifest("make-synthetic", args);
      manifest.set("seed", syn.seed);
      manifest.write(sidecar(syn_out, ".manifest.json"));
      out << "wrote " << examples.size() << " examples to " << syn_out << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace kmbart
