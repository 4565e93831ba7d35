#include "kmbart/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "kmbart/error.hpp"

namespace kmbart {

int task_token(TaskType task) {
  switch (task) {
    case TaskType::caption: return tok::caption;
    case TaskType::region_caption: return tok::region_caption;
    case TaskType::before: return tok::before;
    case TaskType::after: return tok::after;
    case TaskType::intent: return tok::intent;
  }
  return tok::unk;
}

std::string_view task_name(TaskType task) {
  switch (task) {
    case TaskType::caption: return "caption";
    case TaskType::region_caption: return "region_caption";
    case TaskType::before: return "before";
    case TaskType::after: return "after";
    case TaskType::intent: return "intent";
  }
  return "?";
}

TaskType parse_task(std::string_view name) {
  if (name == "caption") return TaskType::caption;
  if (name == "region_caption") return TaskType::region_caption;
  if (name == "before") return TaskType::before;
  if (name == "after") return TaskType::after;
  if (name == "intent") return TaskType::intent;
  throw ValidationError("unknown task type '" + std::string(name) + "'");
}

bool is_generation_task(TaskType task) {
  return task == TaskType::before || task == TaskType::after || task == TaskType::intent;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw ValidationError("duplicate token '" + tokens_[i] + "' in vocabulary");
    }
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, int min_freq) {
  if (min_freq < 1) throw ValidationError("min_freq must be >= 1, got " + std::to_string(min_freq));
  if (corpus.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, long> counts;
  for (const auto& line : corpus) {
    for (auto& w : split_words(line)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, long>> regular;
  for (auto& [word, n] : counts) {
    const bool reserved =
        std::find(kReservedTokens.begin(), kReservedTokens.end(), word) != kReservedTokens.end();
    if (n >= min_freq && !reserved) regular.emplace_back(word, n);
  }
  std::sort(regular.begin(), regular.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens(kReservedTokens.begin(), kReservedTokens.end());
  for (auto& [word, n] : regular) tokens.push_back(word);
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReservedTokens.size()) {
    throw ValidationError("vocabulary has " + std::to_string(tokens.size()) +
                          " tokens, fewer than the 18 reserved ones");
  }
  for (std::size_t i = 0; i < kReservedTokens.size(); ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw ValidationError("vocabulary id " + std::to_string(i) + " is '" + tokens[i] +
                            "', expected '" + std::string(kReservedTokens[i]) + "'");
    }
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  out << serialize();
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? tok::unk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw RangeError("token id " + std::to_string(id) + " outside [0, " + std::to_string(size()) + ")");
  }
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    const auto& t = token(id);
    if (is_reserved(id) && id != tok::unk) continue;
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace kmbart
