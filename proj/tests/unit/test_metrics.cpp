#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "kmbart/metrics.hpp"
#include "support.hpp"

namespace kmbart {
namespace {

std::vector<EvalItem> load_items(const nlohmann::json& j) {
  std::vector<EvalItem> items;
  for (const auto& it : j) {
    items.push_back({it["hypotheses"].get<std::vector<std::string>>(), it["references"].get<std::vector<std::string>>()});
  }
  return items;
}

TEST(Bleu2, IdentityAndZeroBigramOverlap) {
  const std::vector<EvalItem> same = {{{"the man opens the door"}, {"the man opens the door"}},
                                      {{"a dog sits"}, {"a dog sits"}}};
  EXPECT_DOUBLE_EQ(bleu2(same), 100.0);
  const std::vector<EvalItem> none = {{{"a b"}, {"a c"}}};
  EXPECT_EQ(bleu2(none), 0.0);
  EXPECT_THROW(bleu2(std::vector<EvalItem>{}), ValidationError);
  EXPECT_THROW(bleu2(std::vector<EvalItem>{{{}, {"x"}}}), ValidationError);
}

TEST(Bleu2, MatchesScriptedOracle) {
  const auto doc = testing::read_json(testing::fixture_path("metrics_corpus.json"));
  for (const char* name : {"single", "multi"}) {
    const auto items = load_items(doc[name]["items"]);
    ASSERT_EQ(items.size(), 20U);
    EXPECT_NEAR(bleu2(items), doc[name]["bleu2"].get<double>(), 1e-6) << name;
  }
}

TEST(CiderD, IdentityAndDisjoint) {
  const std::vector<EvalItem> same = {{{"the man opens the door"}, {"the man opens the door"}},
                                      {{"a dog sits on a mat"}, {"a dog sits on a mat"}}};
  EXPECT_NEAR(cider_d(same), 10.0, 1e-12);
  const std::vector<EvalItem> disjoint = {{{"x y z w"}, {"the man opens the door"}},
                                          {{"q r s t"}, {"a dog sits on a mat"}}};
  EXPECT_EQ(cider_d(disjoint), 0.0);
  EXPECT_THROW(cider_d(std::vector<EvalItem>{{{"a"}, {}}}), ValidationError);
}

TEST(CiderD, MatchesScriptedOracle) {
  const auto doc = testing::read_json(testing::fixture_path("metrics_corpus.json"));
  for (const char* name : {"single", "multi"}) {
    EXPECT_NEAR(cider_d(load_items(doc[name]["items"])), doc[name]["cider_d"].get<double>(), 1e-5) << name;
  }
}

TEST(Metrics, PermutationInvariantAndBounded) {
  const auto doc = testing::read_json(testing::fixture_path("metrics_corpus.json"));
  auto items = load_items(doc["multi"]["items"]);
  const double b = bleu2(items), c = cider_d(items);
  std::reverse(items.begin(), items.end());
  std::rotate(items.begin(), items.begin() + 7, items.end());
  EXPECT_NEAR(bleu2(items), b, 1e-12);
  EXPECT_NEAR(cider_d(items), c, 1e-12);
  EXPECT_GE(b, 0.0);
  EXPECT_LE(b, 100.0);
  EXPECT_GE(c, 0.0);
  EXPECT_LE(c, 10.0);
}

TEST(Unique, ModuleExamples) {
  EXPECT_NEAR(unique_metric(std::vector<std::string>{"a", "a", "b"}), 100.0 / 3.0, 1e-12);
  EXPECT_EQ(unique_metric(std::vector<std::string>{"a", "b", "c"}), 100.0);
  EXPECT_EQ(unique_metric(std::vector<std::string>{"a", "a"}), 0.0);
  EXPECT_NEAR(unique_metric(std::vector<std::string>{"a", "a", "b"}, UniqueMode::distinct), 200.0 / 3.0, 1e-12);
  EXPECT_THROW(unique_metric(std::vector<std::string>{}), ValidationError);
}

TEST(Novel, ModuleExamples) {
  const std::vector<std::string> gen = {"a", "b", "c"};
  EXPECT_NEAR(novel_metric(gen, sentence_set(std::vector<std::string>{"a"})), 200.0 / 3.0, 1e-12);
  EXPECT_EQ(novel_metric(gen, {}), 100.0);
  EXPECT_EQ(novel_metric(gen, sentence_set(std::vector<std::string>{"c", "b", "a", "d"})), 0.0);
  EXPECT_THROW(novel_metric(std::vector<std::string>{}, {}), ValidationError);
}

TEST(Metrics, TokenizationLowercasesAndCollapsesWhitespace) {
  EXPECT_EQ(metric_tokens("The  Man\tRuns"), (std::vector<std::string>{"the", "man", "runs"}));
  EXPECT_EQ(normalize_whitespace("  a   b "), "a b");
}

}  // namespace
}  // namespace kmbart
