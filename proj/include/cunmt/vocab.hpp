#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cunmt {

using LangId = std::int32_t;
using TokenId = std::int32_t;

// One id space shared by every language. Layout, in order: pad, bos, eos,
// blank, one tag token per language, then the content tokens. Content ids
// are what the synthetic languages emit; the reserved block never appears
// inside a Sentence except for blank introduced by noise.
class Vocabulary {
 public:
  static constexpr TokenId pad_id = 0;
  static constexpr TokenId bos_id = 1;
  static constexpr TokenId eos_id = 2;
  static constexpr TokenId blank_id = 3;

  Vocabulary(std::vector<std::string> language_names, std::int32_t content_size);

  std::int32_t n_languages() const { return static_cast<std::int32_t>(lang_names_.size()); }
  std::int32_t content_size() const { return content_size_; }
  TokenId lang_tag(LangId lang) const;
  TokenId first_content() const { return 4 + n_languages(); }
  std::int32_t size() const { return first_content() + content_size_; }
  bool is_reserved(TokenId id) const { return id >= 0 && id < first_content(); }
  bool is_content(TokenId id) const { return id >= first_content() && id < size(); }

  const std::string& lang_name(LangId lang) const;
  LangId lang_by_name(const std::string& name) const;  // throws DataError if unknown
  std::string token_name(TokenId id) const;

  // Fingerprint of the id layout; checkpoints and corpora must agree on it.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> lang_names_;
  std::int32_t content_size_;
};

}  // namespace cunmt
