#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cunmt/data.hpp"
#include "cunmt/vocab.hpp"

namespace cunmt {

// A deterministic language over the shared concept space: a token bijection
// (the cipher) plus block-reversal reordering. The reordering is an
// involution, so translation through the concept space is exact and
// composition-closed: every language pair has a lossless oracle.
struct LanguageDef {
  LangId lang = 0;
  std::vector<TokenId> cipher;      // concept id -> content token id
  std::vector<std::int32_t> decode; // content token offset -> concept id
  std::int32_t reorder_period = 1;  // block reversal period, >= 1
  double similarity = 1.0;
  std::uint64_t similarity_seed = 0;

  std::uint64_t cipher_hash() const;
};

// The family reference is the identity cipher with period 1. A similarity of
// s pins a seeded fraction s of cipher entries to the reference; the rest is
// a seeded permutation of what remains.
LanguageDef make_language(const Vocabulary& vocab, LangId lang, std::int32_t reorder_period,
                          double similarity, std::uint64_t seed);

// Block reversal with the language's period; applying it twice restores the
// original order.
std::vector<std::int32_t> reorder_concepts(const std::vector<std::int32_t>& concepts,
                                           std::int32_t period);

Sentence render_concepts(const std::vector<std::int32_t>& concepts, const LanguageDef& lang);
std::vector<std::int32_t> recover_concepts(const Sentence& x, const LanguageDef& lang,
                                           const Vocabulary& vocab);

Sentence oracle_translate(const Sentence& x, const LanguageDef& from, const LanguageDef& to,
                          const Vocabulary& vocab);

struct GenSpec {
  std::int64_t n_mono = 0;       // per language
  std::int64_t n_parallel = 0;   // per parallel pair
  std::int32_t len_min = 3;
  std::int32_t len_max = 8;
  double zipf_exponent = 1.0;
};

struct FamilyCorpora {
  std::vector<MonoCorpus> mono;          // one per language
  std::vector<ParallelCorpus> parallel;  // one per requested pair
  // hashes of every concept sentence handed out, for held-out disjointness
  std::unordered_set<std::uint64_t> concept_hashes;
};

std::uint64_t concept_hash(const std::vector<std::int32_t>& concepts);

// Draws concept sentences from a Zipf unigram model, never reusing a concept
// sentence across pools, and renders each pool in its language. Parallel
// rows satisfy tgt == oracle_translate(src) by construction.
FamilyCorpora gen_corpora(const std::vector<LanguageDef>& family, const Vocabulary& vocab,
                          const std::vector<std::pair<LangId, LangId>>& parallel_pairs,
                          const GenSpec& spec, std::uint64_t seed);

// Held-out parallel data for one direction, disjoint from `taken`.
ParallelCorpus gen_test_corpus(const std::vector<LanguageDef>& family, const Vocabulary& vocab,
                               LangId src, LangId tgt, std::int64_t n, const GenSpec& spec,
                               std::uint64_t seed,
                               const std::unordered_set<std::uint64_t>& taken);

void write_family_meta(const std::string& path, const std::vector<LanguageDef>& family,
                       const Vocabulary& vocab, std::uint64_t data_seed);

}  // namespace cunmt
