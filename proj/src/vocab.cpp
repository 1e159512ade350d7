#include "cunmt/vocab.hpp"

#include "cunmt/errors.hpp"
#include "cunmt/rng.hpp"

namespace cunmt {

Vocabulary::Vocabulary(std::vector<std::string> language_names, std::int32_t content_size)
    : lang_names_(std::move(language_names)), content_size_(content_size) {
  if (lang_names_.empty()) throw ConfigError("vocabulary: at least one language required");
  if (content_size_ < 2) throw ConfigError("vocabulary: content size must be >= 2");
  for (std::size_t i = 0; i < lang_names_.size(); ++i) {
    if (lang_names_[i].empty()) throw ConfigError("vocabulary: empty language name");
    for (std::size_t j = i + 1; j < lang_names_.size(); ++j) {
      if (lang_names_[i] == lang_names_[j]) {
        throw ConfigError("vocabulary: duplicate language name '" + lang_names_[i] + "'");
      }
    }
  }
}

TokenId Vocabulary::lang_tag(LangId lang) const {
  if (lang < 0 || lang >= n_languages()) {
    throw ContractError("vocabulary: language index " + std::to_string(lang) + " out of range");
  }
  return 4 + lang;
}

const std::string& Vocabulary::lang_name(LangId lang) const {
  if (lang < 0 || lang >= n_languages()) {
    throw ContractError("vocabulary: language index " + std::to_string(lang) + " out of range");
  }
  return lang_names_[static_cast<std::size_t>(lang)];
}

LangId Vocabulary::lang_by_name(const std::string& name) const {
  for (std::size_t i = 0; i < lang_names_.size(); ++i) {
    if (lang_names_[i] == name) return static_cast<LangId>(i);
  }
  throw DataError("vocabulary: unknown language '" + name + "'");
}

std::string Vocabulary::token_name(TokenId id) const {
  switch (id) {
    case pad_id: return "<pad>";
    case bos_id: return "<bos>";
    case eos_id: return "<eos>";
    case blank_id: return "<blank>";
    default: break;
  }
  if (id >= 4 && id < first_content()) return "<" + lang_names_[static_cast<std::size_t>(id - 4)] + ">";
  if (is_content(id)) return "w" + std::to_string(id - first_content());
  throw ContractError("vocabulary: token id " + std::to_string(id) + " out of range");
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = hash_tag("vocab-v1");
  h = mix64(h ^ static_cast<std::uint64_t>(content_size_));
  for (const std::string& n : lang_names_) h = mix64(h ^ hash_tag(n));
  return h;
}

}  // namespace cunmt
