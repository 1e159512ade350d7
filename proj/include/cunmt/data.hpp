#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cunmt/rng.hpp"
#include "cunmt/vocab.hpp"

namespace cunmt {

// Content token ids only; bos/eos live in batches, not sentences.
struct Sentence {
  std::vector<TokenId> tokens;
  LangId lang = 0;

  bool operator==(const Sentence&) const = default;
};

std::uint64_t sentence_hash(const Sentence& s);

struct MonoCorpus {
  LangId lang = 0;
  std::vector<Sentence> sentences;
};

struct ParallelCorpus {
  std::pair<LangId, LangId> pair;
  std::vector<std::pair<Sentence, Sentence>> rows;
};

struct NoiseConfig {
  double p_drop = 0.1;
  double p_blank = 0.1;
  std::int32_t swap_window = 3;
};

// Teacher-forcing batch. Row r of tgt_in is [bos, t1..tn, pad...] and the
// same row of tgt_out is [t1..tn, eos, pad...]: inputs and targets offset by
// exactly one position. pad appears only after a row's length.
struct Batch {
  std::int64_t rows = 0;
  std::int64_t src_width = 0;
  std::int64_t tgt_width = 0;  // includes the bos/eos slot
  std::vector<TokenId> src;      // rows x src_width
  std::vector<std::int32_t> src_len;
  std::vector<TokenId> tgt_in;   // rows x tgt_width
  std::vector<TokenId> tgt_out;  // rows x tgt_width
  std::vector<std::int32_t> tgt_len;  // content tokens + eos
  std::vector<LangId> src_lang;
  std::vector<LangId> tgt_lang;
};

// Word dropout, blanking and a displacement-bounded shuffle: no surviving
// token moves more than cfg.swap_window positions. At least one token always
// survives (a uniformly chosen one is kept if dropout removed everything).
Sentence apply_noise(const Sentence& x, const NoiseConfig& cfg, Rng& rng);

Batch make_batch(const std::vector<std::pair<Sentence, Sentence>>& rows);

// Recovers row r's sentences by stripping pad/bos/eos.
Sentence batch_src_sentence(const Batch& b, std::int64_t r);
Sentence batch_tgt_sentence(const Batch& b, std::int64_t r);

// Uniform sampling with replacement; deterministic in the rng state.
std::vector<Sentence> sample_mono(const MonoCorpus& corpus, std::int64_t batch_size, Rng& rng);
std::vector<std::pair<Sentence, Sentence>> sample_parallel(const ParallelCorpus& corpus,
                                                           std::int64_t batch_size, Rng& rng);

// Corpus files: one-line header, then one sentence per line as
// space-separated decimal token ids. Parallel files carry two tab-separated
// columns. See README for examples.
void write_mono_corpus(const std::string& path, const MonoCorpus& corpus, const Vocabulary& vocab);
MonoCorpus read_mono_corpus(const std::string& path, const Vocabulary& vocab);
void write_parallel_corpus(const std::string& path, const ParallelCorpus& corpus,
                           const Vocabulary& vocab);
ParallelCorpus read_parallel_corpus(const std::string& path, const Vocabulary& vocab);

}  // namespace cunmt
