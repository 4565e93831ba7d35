#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "kmbart/masking.hpp"
#include "kmbart/model.hpp"
#include "support.hpp"

namespace kmbart {
namespace {

Vocabulary vocab_with_regular(int n) {
  std::vector<std::string> tokens(kReservedTokens.begin(), kReservedTokens.end());
  for (int i = 0; i < n; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocabulary::from_tokens(tokens);
}

std::string action_name(MaskAction a) {
  switch (a) {
    case MaskAction::mask_token: return "mask_token";
    case MaskAction::random_token: return "random_token";
    case MaskAction::keep: return "keep";
  }
  return "?";
}

TEST(MlmMask, MatchesReferenceTrace) {
  const auto doc = testing::read_json(testing::fixture_path("mlm_trace.json"));
  const auto vocab = vocab_with_regular(doc["regular_count"].get<int>());
  const auto positions = doc["positions"].get<std::vector<int>>();
  const auto ids = doc["ids"].get<std::vector<int>>();
  ASSERT_EQ(positions.size(), 20U);
  for (const auto& trace : doc["traces"]) {
    const auto seed = std::stoull(trace["seed"].get<std::string>());
    const auto plan = plan_mlm_mask(positions, ids, vocab, seed);
    ASSERT_EQ(plan.text.size(), trace["plan"].size()) << "seed " << seed;
    for (std::size_t i = 0; i < plan.text.size(); ++i) {
      const auto& want = trace["plan"][i];
      EXPECT_EQ(plan.text[i].position, want[0].get<int>());
      EXPECT_EQ(action_name(plan.text[i].action), want[1].get<std::string>());
      EXPECT_EQ(plan.text[i].replacement, want[2].get<int>());
    }
    EXPECT_TRUE(plan.regions.empty());
  }
}

TEST(MlmMask, DeterministicInSeed) {
  const auto vocab = vocab_with_regular(30);
  std::vector<int> positions(200), ids(200);
  for (int i = 0; i < 200; ++i) {
    positions[i] = i;
    ids[i] = 18 + i % 30;
  }
  EXPECT_EQ(plan_mlm_mask(positions, ids, vocab, 77), plan_mlm_mask(positions, ids, vocab, 77));
  EXPECT_NE(plan_mlm_mask(positions, ids, vocab, 77), plan_mlm_mask(positions, ids, vocab, 78));
}

TEST(MlmMask, RandomReplacementsAreRegular) {
  const auto vocab = vocab_with_regular(5);
  std::vector<int> positions(1000, 0), ids(1000, 18);
  const auto plan = plan_mlm_mask(positions, ids, vocab, 3);
  int random = 0;
  for (const auto& m : plan.text) {
    if (m.action == MaskAction::random_token) {
      ++random;
      EXPECT_GE(m.replacement, tok::reserved_count);
      EXPECT_LT(m.replacement, vocab.size());
    }
  }
  EXPECT_GT(random, 0);
}

TEST(MlmMask, MismatchedInputsRaise) {
  const auto vocab = vocab_with_regular(3);
  EXPECT_THROW(plan_mlm_mask(std::vector<int>{1, 2}, std::vector<int>{18}, vocab, 0), DimensionError);
}

TEST(MrmMask, EmptyAndDeterministic) {
  EXPECT_TRUE(plan_mrm_mask(0, 5).regions.empty());
  EXPECT_EQ(plan_mrm_mask(50, 9), plan_mrm_mask(50, 9));
  for (int r : plan_mrm_mask(50, 9).regions) {
    EXPECT_GE(r, 0);
    EXPECT_LT(r, 50);
  }
}

TEST(MaskedAssembly, SpecialTokensNeverSelected) {
  const auto vocab = testing::small_vocab();
  const auto config = testing::tiny_config(vocab.size());
  // Unknown words encode to <unk>, a reserved id, and stay unmasked.
  auto ex = testing::make_example(TaskType::caption, 2, config, 1, "the zebra opens qqq the door");
  AssemblyOptions opt;
  opt.mode = AssemblyMode::masked;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    opt.seed = seed;
    const auto in = assemble_input(ex, vocab, opt, config.max_positions);
    for (std::size_t i = 0; i < in.mlm_positions.size(); ++i) {
      ASSERT_FALSE(Vocabulary::is_reserved(in.mlm_original[i]));
      ASSERT_EQ(in.segments[in.mlm_positions[i]], Segment::text);
    }
  }
}

}  // namespace
}  // namespace kmbart
