#include "kmbart/synthetic.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

#include "kmbart/error.hpp"
#include "kmbart/rng.hpp"

namespace kmbart {
namespace {

struct ClassWords {
  std::string_view object;
  std::string_view verb;
  std::string_view intent;
  std::string_view before;
  std::string_view after;
};

constexpr std::array<ClassWords, 12> kClasses = {{
    {"dog", "walks", "give the dog exercise", "find the leash", "rest at home"},
    {"ball", "kicks", "score a goal", "run onto the field", "celebrate with the team"},
    {"cup", "drinks from", "quench thirst", "pour some tea", "wash the cup"},
    {"bike", "rides", "reach the park", "pump the tires", "lock the bike"},
    {"book", "reads", "learn something new", "open the book", "close the book"},
    {"phone", "answers", "talk to a friend", "hear it ring", "hang up"},
    {"chair", "sits on", "take a break", "walk to the chair", "stand up"},
    {"door", "opens", "enter the room", "find the key", "close the door"},
    {"car", "drives", "get to work", "start the engine", "park the car"},
    {"cake", "cuts", "share dessert", "bake the cake", "eat a slice"},
    {"guitar", "plays", "entertain friends", "tune the strings", "take a bow"},
    {"umbrella", "holds", "stay dry", "check the weather", "shake off the rain"},
}};

constexpr std::array<std::string_view, 4> kPeople = {"man", "woman", "boy", "girl"};
constexpr std::array<std::string_view, 8> kAdjectives = {"red",    "small", "old",   "shiny",
                                                         "wooden", "large", "blue",  "soft"};
constexpr std::array<std::string_view, 4> kRelations = {"next to", "on", "under", "behind"};

// Fixed so that corpora drawn with different seeds share the same classes.
constexpr std::uint64_t kPrototypeSeed = 0x6b6d62617274ULL;

const ClassWords& words(int cls) { return kClasses[static_cast<std::size_t>(cls) % kClasses.size()]; }

std::string object_name(int cls) {
  std::string name(words(cls).object);
  if (cls >= static_cast<int>(kClasses.size())) name += std::to_string(cls / kClasses.size());
  return name;
}

int attribute_of(int cls, int n_attr) { return cls % n_attr; }
int relation_of(int subject_cls, int object_cls, int n_rel) { return (subject_cls + 2 * object_cls) % n_rel; }

std::string_view comet_relation(TaskType task, int variant) {
  switch (task) {
    case TaskType::intent: return variant % 2 == 0 ? "xIntent" : "xWant";
    case TaskType::before: return "xNeed";
    case TaskType::after: return variant % 2 == 0 ? "xReact" : "xEffect";
    default: return "";
  }
}

}  // namespace

std::vector<MultimodalExample> make_synthetic(const SyntheticOptions& o) {
  if (o.n_examples < 0 || o.d_visual < 1 || o.n_classes < 1 || o.n_attr < 1 || o.n_rel < 1 ||
      o.min_rois < 0 || o.max_rois < o.min_rois) {
    throw ValidationError("synthetic corpus: invalid sizes");
  }
  if (o.tasks.empty()) throw ValidationError("synthetic corpus: empty task list");

  std::vector<std::vector<float>> prototypes(o.n_classes);
  {
    Rng proto(kPrototypeSeed);
    for (auto& p : prototypes) {
      p.resize(o.d_visual);
      for (auto& v : p) v = static_cast<float>(proto.normal());
    }
  }

  Rng rng(o.seed);
  std::vector<MultimodalExample> out;
  out.reserve(o.n_examples);
  for (int i = 0; i < o.n_examples; ++i) {
    MultimodalExample ex;
    ex.task = o.tasks[static_cast<std::size_t>(i) % o.tasks.size()];
    ex.source_id = "syn" + std::to_string(o.seed) + "-" + std::to_string(i);

    int lo = o.min_rois;
    if (ex.task == TaskType::region_caption) lo = std::max(lo, std::min(2, o.max_rois));
    if (is_generation_task(ex.task) || ex.task == TaskType::caption) lo = std::max(lo, std::min(1, o.max_rois));
    const int n_rois = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.max_rois - lo + 1)));

    std::vector<int> classes(n_rois);
    for (int r = 0; r < n_rois; ++r) {
      classes[r] = static_cast<int>(rng.below(static_cast<std::uint64_t>(o.n_classes)));
      RoIFeature roi;
      roi.feat.resize(o.d_visual);
      for (int k = 0; k < o.d_visual; ++k) {
        roi.feat[k] = prototypes[classes[r]][k] + static_cast<float>(o.feature_noise * rng.normal());
      }
      std::vector<double> g(o.n_classes);
      double total = 0.0;
      for (int c = 0; c < o.n_classes; ++c) {
        g[c] = rng.gamma(c == classes[r] ? o.dirichlet_peak : o.dirichlet_floor);
        total += g[c];
      }
      roi.class_probs.resize(o.n_classes);
      for (int c = 0; c < o.n_classes; ++c) roi.class_probs[c] = static_cast<float>(g[c] / total);
      ex.rois.push_back(std::move(roi));
    }

    const int c0 = n_rois > 0 ? classes[0] : 0;
    const int c1 = n_rois > 1 ? classes[1] : c0;
    const std::string person(kPeople[rng.below(kPeople.size())]);
    const auto& w = words(c0);
    switch (ex.task) {
      case TaskType::intent:
      case TaskType::before:
      case TaskType::after: {
        ex.event_text = "the " + person + " " + std::string(w.verb) + " the " + object_name(c0);
        const auto phrase = ex.task == TaskType::intent ? w.intent
                            : ex.task == TaskType::before ? w.before
                                                           : w.after;
        ex.target_text = std::string(ex.task == TaskType::intent ? "to " : "") + std::string(phrase);
        if (o.comet_relations) ex.relation = std::string(comet_relation(ex.task, i / static_cast<int>(o.tasks.size())));
        break;
      }
      case TaskType::caption:
        ex.target_text = "a " + person + " with a " +
                         std::string(kAdjectives[attribute_of(c0, o.n_attr) % kAdjectives.size()]) + " " +
                         object_name(c0);
        break;
      case TaskType::region_caption: {
        for (int r = 0; r < n_rois; ++r) ex.attributes.push_back({r, attribute_of(classes[r], o.n_attr)});
        for (int r = 0; r + 1 < n_rois; ++r) {
          ex.relations.push_back({r, r + 1, relation_of(classes[r], classes[r + 1], o.n_rel)});
        }
        const int rel = relation_of(c0, c1, o.n_rel);
        ex.target_text = "the " + object_name(c0) + " is " +
                         std::string(kRelations[static_cast<std::size_t>(rel) % kRelations.size()]) + " the " +
                         object_name(c1);
        break;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace kmbart
