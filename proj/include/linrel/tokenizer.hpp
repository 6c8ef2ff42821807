#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace linrel {

/// Word-level tokenizer over a closed vocabulary. Tokens are whitespace-
/// separated words; "\n" is its own token so statement boundaries survive a
/// round trip. Single-token objects make the first-token success criterion
/// exact rather than approximate.
class Vocabulary {
public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& word) const;

  /// Id of a word; InputError when out of vocabulary.
  int id(const std::string& word) const;

  /// Splits on spaces/newlines ("\n" becomes a token) and maps to ids.
  std::vector<int> encode(const std::string& text) const;

  /// Inverse of encode up to whitespace normalization: words joined with
  /// single spaces, none around newline tokens.
  std::string decode(const std::vector<int>& ids) const;

  /// Pure splitting step of encode, usable without a vocabulary instance.
  static std::vector<std::string> split_words(const std::string& text);
  static std::string join_words(const std::vector<std::string>& words);

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

} // namespace linrel
