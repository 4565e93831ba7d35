#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kmbart {

// Reserved ids; these occupy 0..17 in every vocabulary.
namespace tok {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int unk = 3;
inline constexpr int mask = 4;
inline constexpr int cls = 5;
inline constexpr int img = 6;
inline constexpr int img_end = 7;
inline constexpr int img_feat = 8;
inline constexpr int event = 9;
inline constexpr int event_end = 10;
inline constexpr int mlm = 11;
inline constexpr int mlm_end = 12;
inline constexpr int caption = 13;
inline constexpr int region_caption = 14;
inline constexpr int before = 15;
inline constexpr int after = 16;
inline constexpr int intent = 17;
inline constexpr int reserved_count = 18;
}  // namespace tok

inline constexpr std::array<std::string_view, tok::reserved_count> kReservedTokens = {
    "<pad>",   "<s>",    "</s>",        "<unk>",          "<mask>",   "<cls>",
    "<img>",   "</img>", "<img_feat>",  "<event>",        "</event>", "<mlm>",
    "</mlm>",  "<caption>", "<region_caption>", "<before>", "<after>", "<intent>"};

enum class TaskType { caption, region_caption, before, after, intent };

int task_token(TaskType task);
std::string_view task_name(TaskType task);
// Throws ValidationError on an unknown name.
TaskType parse_task(std::string_view name);
bool is_generation_task(TaskType task);

// Immutable token <-> id map. Regular tokens are lowercased whitespace-split
// words; ids are dense and the reserved tokens come first.
class Vocabulary {
 public:
  // Throws ValidationError if min_freq < 1 or the corpus is empty.
  static Vocabulary build(std::span<const std::string> corpus, int min_freq);

  // Tokens in id order; the first 18 must be the reserved tokens.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // One token per line, line number = id, LF endings.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  int regular_count() const noexcept { return size() - tok::reserved_count; }
  static bool is_reserved(int id) noexcept { return id >= 0 && id < tok::reserved_count; }

  // <unk> for unknown tokens.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.find(token) != index_.end(); }
  // Throws RangeError for ids outside [0, size()).
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view text) const;
  // Reserved tokens other than <unk> are dropped.
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

// Lowercase (ASCII) and split on whitespace.
std::vector<std::string> split_words(std::string_view text);

}  // namespace kmbart
