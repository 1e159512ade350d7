#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cunmt/data.hpp"
#include "cunmt/graph.hpp"
#include "cunmt/tensor.hpp"
#include "cunmt/vocab.hpp"

namespace cunmt {

struct ModelConfig {
  std::int32_t layers = 2;  // encoder depth == decoder depth
  std::int32_t hidden = 64;
  std::int32_t heads = 4;
  std::int32_t ffn_mult = 4;
  std::int32_t max_len = 16;    // content tokens per sentence
  std::int32_t vocab_size = 0;  // full shared id space
  double dropout = 0.0;

  void validate() const;
  std::int32_t head_dim() const { return hidden / heads; }
  // tag/bos prefix plus the eos slot
  std::int32_t positions() const { return max_len + 2; }

  bool operator==(const ModelConfig&) const = default;
};

// Every translation direction lives in this one parameter set. The output
// projection is the transpose of the token embedding (tied weights), and the
// target language is selected by a tag token prepended to the source.
struct ModelParams {
  ModelConfig cfg;
  std::vector<std::pair<std::string, Tensor>> named;

  Tensor& find(const std::string& name);
  const Tensor& find(const std::string& name) const;
  std::vector<Tensor*> tensor_ptrs();
  std::int64_t total_param_count() const;
  // byte fingerprint; used to audit that generation never touches weights
  std::uint64_t content_hash() const;
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

// Parameter leaves of one graph, in canonical order.
struct BoundParams {
  std::vector<std::pair<std::string, NodeId>> ids;
  NodeId at(const std::string& name) const;
};

BoundParams bind_params(Graph& g, const ModelParams& params, bool trainable);

// Training-mode forward: returns the cross-entropy loss node over non-pad
// target positions. `dropout_rng` enables dropout; scoring and decoding
// always run the deterministic inference path.
struct ForwardNodes {
  NodeId loss;
  NodeId logits;  // [rows*tgt_width, vocab]
};
ForwardNodes model_forward_loss(Graph& g, const BoundParams& bound, const ModelParams& params,
                                const Vocabulary& vocab, const Batch& batch,
                                Rng* dropout_rng = nullptr);

struct ScoreResult {
  std::vector<double> token_log_probs;  // one per target token, eos included
  double total;                         // sum of the above
};
ScoreResult score(const ModelParams& params, const Vocabulary& vocab, const Sentence& src,
                  const Sentence& tgt, LangId tgt_lang);
std::vector<ScoreResult> score_batch(const ModelParams& params, const Vocabulary& vocab,
                                     const std::vector<std::pair<Sentence, Sentence>>& rows);

struct DecodeResult {
  Sentence sentence;
  bool truncated = false;  // no eos within max_len
  double log_prob = 0.0;   // sum over emitted tokens (plus eos when present)
  double normalized_score() const;
};

// Argmax decoding, ties broken toward the lowest token id. Only content
// tokens and eos can be emitted, and eos is barred at the first step, so the
// result always carries at least one token.
DecodeResult greedy_decode(const ModelParams& params, const Vocabulary& vocab, const Sentence& src,
                           LangId tgt_lang, std::int32_t max_len);
std::vector<DecodeResult> greedy_decode_batch(const ModelParams& params, const Vocabulary& vocab,
                                              const std::vector<Sentence>& srcs, LangId tgt_lang,
                                              std::int32_t max_len);

struct BeamResult {
  DecodeResult best;
  std::vector<DecodeResult> nbest;  // sorted by normalized score, no duplicates
};
// Length-normalized beam search. The greedy hypothesis is always part of the
// candidate pool, so the best beam result never scores below greedy.
BeamResult beam_decode(const ModelParams& params, const Vocabulary& vocab, const Sentence& src,
                       LangId tgt_lang, std::int32_t beam_size, std::int32_t max_len);

// Checkpoints: magic + JSON header (config, vocab hash, step, tensor table)
// followed by raw little-endian f64 payloads.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t vocab_hash = 0;
  std::int64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string extra_json;  // trainer bookkeeping, opaque at this layer
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
// Throws DataError unless config and vocabulary both match.
void require_compatible(const Checkpoint& ckpt, const ModelConfig& cfg, std::uint64_t vocab_hash);

}  // namespace cunmt
