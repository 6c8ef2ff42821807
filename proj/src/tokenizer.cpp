#include "linrel/tokenizer.hpp"

#include "linrel/errors.hpp"

namespace linrel {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw InputError("vocabulary: empty token at id " + std::to_string(i));
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw InputError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ContractError("vocabulary: token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& word) const {
  return index_.count(word) != 0;
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw InputError("out-of-vocabulary token '" + word + "'");
  return it->second;
}

std::vector<std::string> Vocabulary::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char c : text) {
    if (c == ' ') {
      flush();
    } else if (c == '\n') {
      flush();
      out.emplace_back("\n");
    } else {
      word.push_back(c);
    }
  }
  flush();
  return out;
}

std::string Vocabulary::join_words(const std::vector<std::string>& words) {
  std::string out;
  bool at_line_start = true;
  for (const auto& w : words) {
    if (w == "\n") {
      out.push_back('\n');
      at_line_start = true;
      continue;
    }
    if (!at_line_start) out.push_back(' ');
    out += w;
    at_line_start = false;
  }
  return out;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  const auto words = split_words(text);
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int t : ids) words.push_back(token(t));
  return join_words(words);
}

} // namespace linrel
