#include "cunmt/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cunmt/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace cunmt {

namespace {

constexpr double kMask = -1e9;

std::string enc_name(int layer, const char* part) {
  return "enc" + std::to_string(layer) + "." + part;
}
std::string dec_name(int layer, const char* part) {
  return "dec" + std::to_string(layer) + "." + part;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model: layers must be >= 1");
  if (hidden < 2 || heads < 1 || hidden % heads != 0) {
    throw ConfigError("model: hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (ffn_mult < 1) throw ConfigError("model: ffn_mult must be >= 1");
  if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
  if (vocab_size < 8) throw ConfigError("model: vocab_size must cover the reserved ids");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0,1)");
}

Tensor& ModelParams::find(const std::string& name) {
  for (auto& [n, t] : named) {
    if (n == name) return t;
  }
  throw ContractError("model: unknown parameter '" + name + "'");
}

const Tensor& ModelParams::find(const std::string& name) const {
  for (const auto& [n, t] : named) {
    if (n == name) return t;
  }
  throw ContractError("model: unknown parameter '" + name + "'");
}

std::vector<Tensor*> ModelParams::tensor_ptrs() {
  std::vector<Tensor*> out;
  out.reserve(named.size());
  for (auto& [n, t] : named) out.push_back(&t);
  return out;
}

std::int64_t ModelParams::total_param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named) n += t.numel();
  return n;
}

std::uint64_t ModelParams::content_hash() const {
  std::uint64_t h = 0x6d6f64;
  for (const auto& [name, t] : named) {
    h = mix64(h ^ hash_tag(name));
    for (double v : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = mix64(h ^ bits);
    }
  }
  return h;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  Rng rng = derive_rng(seed, "model-init");

  const std::int64_t H = cfg.hidden;
  const std::int64_t F = static_cast<std::int64_t>(cfg.ffn_mult) * H;
  const double wstd = 1.0 / std::sqrt(static_cast<double>(H));
  const double fstd = 1.0 / std::sqrt(static_cast<double>(F));
  // small embedding scale keeps a fresh model near-uniform over the vocab
  const double estd = 0.05;

  auto add = [&](const std::string& name, Tensor t) { p.named.emplace_back(name, std::move(t)); };
  auto add_ln = [&](const std::string& prefix) {
    add(prefix + ".g", Tensor::full({H}, 1.0));
    add(prefix + ".b", Tensor::zeros({H}));
  };
  auto add_attn = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      add(prefix + "." + w, Tensor::randn({H, H}, rng, wstd));
      add(prefix + ".b" + std::string(1, w[1]), Tensor::zeros({H}));
    }
  };
  auto add_ffn = [&](const std::string& prefix) {
    add(prefix + ".w1", Tensor::randn({H, F}, rng, wstd));
    add(prefix + ".b1", Tensor::zeros({F}));
    add(prefix + ".w2", Tensor::randn({F, H}, rng, fstd));
    add(prefix + ".b2", Tensor::zeros({H}));
  };

  add("embed", Tensor::randn({cfg.vocab_size, H}, rng, estd));
  add("pos", Tensor::randn({cfg.positions(), H}, rng, estd));
  for (int l = 0; l < cfg.layers; ++l) {
    add_ln(enc_name(l, "ln1"));
    add_attn(enc_name(l, "attn"));
    add_ln(enc_name(l, "ln2"));
    add_ffn(enc_name(l, "ffn"));
  }
  add_ln("enc.ln");
  for (int l = 0; l < cfg.layers; ++l) {
    add_ln(dec_name(l, "ln1"));
    add_attn(dec_name(l, "self"));
    add_ln(dec_name(l, "ln2"));
    add_attn(dec_name(l, "cross"));
    add_ln(dec_name(l, "ln3"));
    add_ffn(dec_name(l, "ffn"));
  }
  add_ln("dec.ln");
  return p;
}

BoundParams bind_params(Graph& g, const ModelParams& params, bool trainable) {
  BoundParams bound;
  bound.ids.reserve(params.named.size());
  for (const auto& [name, t] : params.named) {
    bound.ids.emplace_back(name, g.leaf(t, trainable));
  }
  return bound;
}

NodeId BoundParams::at(const std::string& name) const {
  for (const auto& [n, id] : ids) {
    if (n == name) return id;
  }
  throw ContractError("model: parameter '" + name + "' not bound");
}

namespace {

// Shared graph-building context for the encoder/decoder stacks. Dropout is a
// constant multiplicative mask, present only when an rng is supplied.
struct Net {
  Graph& g;
  const BoundParams& bound;
  const ModelConfig& cfg;
  Rng* dropout_rng = nullptr;

  NodeId dropout(NodeId x) {
    if (dropout_rng == nullptr || cfg.dropout <= 0.0) return x;
    const double keep = 1.0 - cfg.dropout;
    Tensor mask = Tensor::zeros(g.value(x).shape);
    std::bernoulli_distribution coin(keep);
    for (double& v : mask.data) v = coin(*dropout_rng) ? 1.0 / keep : 0.0;
    return g.mul(x, g.leaf(std::move(mask)));
  }

  NodeId linear(NodeId x, const std::string& w, const std::string& b) {
    return g.add(g.matmul(x, bound.at(w)), bound.at(b));
  }

  NodeId norm(NodeId x, const std::string& prefix) {
    NodeId n = g.layer_norm(x);
    return g.add(g.mul(n, bound.at(prefix + ".g")), bound.at(prefix + ".b"));
  }

  // ids: rows x width, padded; returns [rows, width, hidden]
  NodeId embed(const std::vector<TokenId>& ids, std::int64_t rows, std::int64_t width) {
    NodeId e = g.embed_gather(bound.at("embed"), ids);
    NodeId x = g.reshape(e, {rows, width, cfg.hidden});
    std::vector<TokenId> positions(static_cast<std::size_t>(width));
    for (std::int64_t i = 0; i < width; ++i) positions[static_cast<std::size_t>(i)] = static_cast<TokenId>(i);
    NodeId pos = g.embed_gather(bound.at("pos"), positions);
    return dropout(g.add(x, pos));
  }

  // mask: additive constant [rows*heads, q_width, k_width]
  NodeId attention(NodeId q_src, NodeId kv_src, const std::string& prefix, const Tensor& mask) {
    const std::int64_t nh = cfg.heads;
    NodeId q = g.split_heads(linear(q_src, prefix + ".wq", prefix + ".bq"), nh);
    NodeId k = g.split_heads(linear(kv_src, prefix + ".wk", prefix + ".bk"), nh);
    NodeId v = g.split_heads(linear(kv_src, prefix + ".wv", prefix + ".bv"), nh);
    NodeId scores = g.scale(g.matmul(q, g.transpose_last2(k)),
                            1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
    scores = g.add(scores, g.leaf(mask));
    NodeId ctx = g.merge_heads(g.matmul(g.softmax_lastdim(scores), v), nh);
    return dropout(linear(ctx, prefix + ".wo", prefix + ".bo"));
  }

  NodeId ffn(NodeId x, const std::string& prefix) {
    NodeId h = g.gelu(linear(x, prefix + ".w1", prefix + ".b1"));
    return dropout(linear(h, prefix + ".w2", prefix + ".b2"));
  }

  NodeId encoder(const std::vector<TokenId>& src_ids, const std::vector<std::int32_t>& key_len,
                 std::int64_t rows, std::int64_t width) {
    Tensor mask = Tensor::zeros({rows * cfg.heads, width, width});
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t valid = key_len[static_cast<std::size_t>(r)];
      for (std::int64_t h = 0; h < cfg.heads; ++h) {
        double* block = mask.data.data() + ((r * cfg.heads + h) * width) * width;
        for (std::int64_t qi = 0; qi < width; ++qi) {
          for (std::int64_t ki = valid; ki < width; ++ki) block[qi * width + ki] = kMask;
        }
      }
    }
    NodeId x = embed(src_ids, rows, width);
    for (int l = 0; l < cfg.layers; ++l) {
      NodeId n1 = norm(x, enc_name(l, "ln1"));
      x = g.add(x, attention(n1, n1, enc_name(l, "attn"), mask));
      x = g.add(x, ffn(norm(x, enc_name(l, "ln2")), enc_name(l, "ffn")));
    }
    return norm(x, "enc.ln");
  }

  // Returns [rows*width, vocab] logits through the tied embedding.
  NodeId decoder_logits(NodeId enc_out, const std::vector<std::int32_t>& src_key_len,
                        const std::vector<TokenId>& tgt_ids,
                        const std::vector<std::int32_t>& tgt_len, std::int64_t rows,
                        std::int64_t width) {
    const std::int64_t src_width = g.value(enc_out).dim(1);
    Tensor self_mask = Tensor::zeros({rows * cfg.heads, width, width});
    Tensor cross_mask = Tensor::zeros({rows * cfg.heads, width, src_width});
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::int64_t tvalid = tgt_len[static_cast<std::size_t>(r)];
      const std::int64_t svalid = src_key_len[static_cast<std::size_t>(r)];
      for (std::int64_t h = 0; h < cfg.heads; ++h) {
        double* sblock = self_mask.data.data() + ((r * cfg.heads + h) * width) * width;
        double* cblock = cross_mask.data.data() + ((r * cfg.heads + h) * width) * src_width;
        for (std::int64_t qi = 0; qi < width; ++qi) {
          for (std::int64_t ki = 0; ki < width; ++ki) {
            if (ki > qi || (ki >= tvalid && ki > 0)) sblock[qi * width + ki] = kMask;
          }
          for (std::int64_t ki = svalid; ki < src_width; ++ki) cblock[qi * src_width + ki] = kMask;
        }
      }
    }
    NodeId x = embed(tgt_ids, rows, width);
    for (int l = 0; l < cfg.layers; ++l) {
      NodeId n1 = norm(x, dec_name(l, "ln1"));
      x = g.add(x, attention(n1, n1, dec_name(l, "self"), self_mask));
      x = g.add(x, attention(norm(x, dec_name(l, "ln2")), enc_out, dec_name(l, "cross"), cross_mask));
      x = g.add(x, ffn(norm(x, dec_name(l, "ln3")), dec_name(l, "ffn")));
    }
    x = norm(x, "dec.ln");
    NodeId flat = g.reshape(x, {rows * width, cfg.hidden});
    return g.matmul(flat, g.transpose_last2(bound.at("embed")));
  }
};

// src ids with the target-language tag prepended; this is how the model is
// told which direction to translate.
std::vector<TokenId> tagged_src_ids(const Batch& batch, const Vocabulary& vocab) {
  const std::int64_t width = batch.src_width + 1;
  std::vector<TokenId> ids(static_cast<std::size_t>(batch.rows * width), Vocabulary::pad_id);
  for (std::int64_t r = 0; r < batch.rows; ++r) {
    ids[static_cast<std::size_t>(r * width)] =
        vocab.lang_tag(batch.tgt_lang[static_cast<std::size_t>(r)]);
    for (std::int64_t c = 0; c < batch.src_width; ++c) {
      ids[static_cast<std::size_t>(r * width + 1 + c)] =
          batch.src[static_cast<std::size_t>(r * batch.src_width + c)];
    }
  }
  return ids;
}

std::vector<std::int32_t> tagged_src_lens(const Batch& batch) {
  std::vector<std::int32_t> lens;
  lens.reserve(static_cast<std::size_t>(batch.rows));
  for (auto l : batch.src_len) lens.push_back(l + 1);
  return lens;
}

void check_lengths(const Batch& batch, const ModelConfig& cfg) {
  for (auto l : batch.src_len) {
    if (l > cfg.max_len) {
      throw ContractError("model: source length " + std::to_string(l) + " exceeds max_len " +
                          std::to_string(cfg.max_len));
    }
  }
  for (auto l : batch.tgt_len) {
    if (l > cfg.max_len + 1) {
      throw ContractError("model: target length " + std::to_string(l - 1) + " exceeds max_len " +
                          std::to_string(cfg.max_len));
    }
  }
}

void log_softmax_row(const double* logits, std::int64_t vocab, std::vector<double>& out) {
  double mx = logits[0];
  for (std::int64_t j = 1; j < vocab; ++j) mx = std::max(mx, logits[j]);
  double sum = 0.0;
  for (std::int64_t j = 0; j < vocab; ++j) sum += std::exp(logits[j] - mx);
  const double lse = mx + std::log(sum);
  out.resize(static_cast<std::size_t>(vocab));
  for (std::int64_t j = 0; j < vocab; ++j) out[static_cast<std::size_t>(j)] = logits[j] - lse;
}

}  // namespace

ForwardNodes model_forward_loss(Graph& g, const BoundParams& bound, const ModelParams& params,
                                const Vocabulary& vocab, const Batch& batch, Rng* dropout_rng) {
  check_lengths(batch, params.cfg);
  Net net{g, bound, params.cfg, dropout_rng};
  const auto src_ids = tagged_src_ids(batch, vocab);
  const auto src_lens = tagged_src_lens(batch);
  NodeId enc = net.encoder(src_ids, src_lens, batch.rows, batch.src_width + 1);
  NodeId logits =
      net.decoder_logits(enc, src_lens, batch.tgt_in, batch.tgt_len, batch.rows, batch.tgt_width);
  NodeId loss = g.cross_entropy(logits, batch.tgt_out, Vocabulary::pad_id);
  return {loss, logits};
}

std::vector<ScoreResult> score_batch(const ModelParams& params, const Vocabulary& vocab,
                                     const std::vector<std::pair<Sentence, Sentence>>& rows) {
  Batch batch = make_batch(rows);
  Graph g;
  BoundParams bound = bind_params(g, params, /*trainable=*/false);
  ForwardNodes fwd = model_forward_loss(g, bound, params, vocab, batch);
  const Tensor& logits = g.value(fwd.logits);
  const std::int64_t vocab_size = logits.dim(1);

  std::vector<ScoreResult> out(static_cast<std::size_t>(batch.rows));
  std::vector<double> lsm;
  for (std::int64_t r = 0; r < batch.rows; ++r) {
    ScoreResult& res = out[static_cast<std::size_t>(r)];
    const std::int64_t len = batch.tgt_len[static_cast<std::size_t>(r)];
    for (std::int64_t t = 0; t < len; ++t) {
      const double* row = logits.data.data() + (r * batch.tgt_width + t) * vocab_size;
      log_softmax_row(row, vocab_size, lsm);
      const TokenId target = batch.tgt_out[static_cast<std::size_t>(r * batch.tgt_width + t)];
      res.token_log_probs.push_back(lsm[static_cast<std::size_t>(target)]);
    }
    res.total = 0.0;
    for (double lp : res.token_log_probs) res.total += lp;
  }
  return out;
}

ScoreResult score(const ModelParams& params, const Vocabulary& vocab, const Sentence& src,
                  const Sentence& tgt, LangId tgt_lang) {
  Sentence tgt_tagged = tgt;
  tgt_tagged.lang = tgt_lang;
  return score_batch(params, vocab, {{src, tgt_tagged}})[0];
}

double DecodeResult::normalized_score() const {
  const double len = static_cast<double>(sentence.tokens.size()) + (truncated ? 0.0 : 1.0);
  return log_prob / std::max(1.0, len);
}

namespace {

// Encoder output values for decode batches; the graph is discarded
// immediately, only the tensor survives.
Tensor encode_values(const ModelParams& params, const Vocabulary& vocab,
                     const std::vector<Sentence>& srcs, LangId tgt_lang,
                     std::vector<std::int32_t>& src_lens_out) {
  std::vector<std::pair<Sentence, Sentence>> rows;
  rows.reserve(srcs.size());
  for (const Sentence& s : srcs) {
    // the target side is a placeholder; only the source is encoded
    rows.push_back({s, Sentence{s.tokens, tgt_lang}});
  }
  Batch batch = make_batch(rows);
  check_lengths(batch, params.cfg);
  Graph g;
  BoundParams bound = bind_params(g, params, false);
  Net net{g, bound, params.cfg, nullptr};
  const auto src_ids = tagged_src_ids(batch, vocab);
  src_lens_out = tagged_src_lens(batch);
  NodeId enc = net.encoder(src_ids, src_lens_out, batch.rows, batch.src_width + 1);
  return g.value(enc);
}

// One decoder step over the current prefixes; returns log-softmax rows for
// the last position of every sequence.
std::vector<std::vector<double>> decode_step(const ModelParams& params, const Tensor& enc_out,
                                             const std::vector<std::int32_t>& src_lens,
                                             const std::vector<std::vector<TokenId>>& prefixes) {
  const std::int64_t rows = static_cast<std::int64_t>(prefixes.size());
  std::int64_t width = 0;
  for (const auto& p : prefixes) width = std::max(width, static_cast<std::int64_t>(p.size()) + 1);
  std::vector<TokenId> ids(static_cast<std::size_t>(rows * width), Vocabulary::pad_id);
  std::vector<std::int32_t> lens(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    ids[static_cast<std::size_t>(r * width)] = Vocabulary::bos_id;
    const auto& p = prefixes[static_cast<std::size_t>(r)];
    std::copy(p.begin(), p.end(), ids.begin() + r * width + 1);
    lens[static_cast<std::size_t>(r)] = static_cast<std::int32_t>(p.size()) + 1;
  }
  Graph g;
  BoundParams bound = bind_params(g, params, false);
  Net net{g, bound, params.cfg, nullptr};
  NodeId enc = g.leaf(enc_out);
  NodeId logits = net.decoder_logits(enc, src_lens, ids, lens, rows, width);
  const Tensor& lv = g.value(logits);
  const std::int64_t vocab_size = lv.dim(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t pos = lens[static_cast<std::size_t>(r)] - 1;
    log_softmax_row(lv.data.data() + (r * width + pos) * vocab_size, vocab_size,
                    out[static_cast<std::size_t>(r)]);
  }
  return out;
}

// Generation emits content tokens plus eos; eos is barred on the first step.
bool token_allowed(const Vocabulary& vocab, TokenId t, bool first_step) {
  if (t == Vocabulary::eos_id) return !first_step;
  return vocab.is_content(t);
}

}  // namespace

std::vector<DecodeResult> greedy_decode_batch(const ModelParams& params, const Vocabulary& vocab,
                                              const std::vector<Sentence>& srcs, LangId tgt_lang,
                                              std::int32_t max_len) {
  if (srcs.empty()) return {};
  std::vector<std::int32_t> src_lens;
  const Tensor enc = encode_values(params, vocab, srcs, tgt_lang, src_lens);
  const std::int64_t rows = static_cast<std::int64_t>(srcs.size());

  std::vector<DecodeResult> results(static_cast<std::size_t>(rows));
  std::vector<std::vector<TokenId>> prefixes(static_cast<std::size_t>(rows));
  std::vector<bool> done(static_cast<std::size_t>(rows), false);

  for (std::int32_t step = 0; step <= max_len; ++step) {
    bool all_done = true;
    for (bool d : done) all_done = all_done && d;
    if (all_done) break;
    if (step == max_len) {
      for (std::int64_t r = 0; r < rows; ++r) {
        if (!done[static_cast<std::size_t>(r)]) results[static_cast<std::size_t>(r)].truncated = true;
      }
      break;
    }
    const auto dist = decode_step(params, enc, src_lens, prefixes);
    for (std::int64_t r = 0; r < rows; ++r) {
      if (done[static_cast<std::size_t>(r)]) continue;
      const auto& lsm = dist[static_cast<std::size_t>(r)];
      TokenId best = -1;
      double best_lp = -1e300;
      for (TokenId t = 0; t < static_cast<TokenId>(lsm.size()); ++t) {
        if (!token_allowed(vocab, t, step == 0)) continue;
        if (lsm[static_cast<std::size_t>(t)] > best_lp) {
          best_lp = lsm[static_cast<std::size_t>(t)];
          best = t;
        }
      }
      results[static_cast<std::size_t>(r)].log_prob += best_lp;
      if (best == Vocabulary::eos_id) {
        done[static_cast<std::size_t>(r)] = true;
      } else {
        prefixes[static_cast<std::size_t>(r)].push_back(best);
      }
    }
  }
  for (std::int64_t r = 0; r < rows; ++r) {
    results[static_cast<std::size_t>(r)].sentence =
        Sentence{prefixes[static_cast<std::size_t>(r)], tgt_lang};
  }
  return results;
}

DecodeResult greedy_decode(const ModelParams& params, const Vocabulary& vocab, const Sentence& src,
                           LangId tgt_lang, std::int32_t max_len) {
  return greedy_decode_batch(params, vocab, {src}, tgt_lang, max_len)[0];
}

BeamResult beam_decode(const ModelParams& params, const Vocabulary& vocab, const Sentence& src,
                       LangId tgt_lang, std::int32_t beam_size, std::int32_t max_len) {
  if (beam_size < 1) throw ContractError("beam_decode: beam size must be >= 1");
  std::vector<std::int32_t> src_lens;
  const Tensor enc1 = encode_values(params, vocab, {src}, tgt_lang, src_lens);

  struct Hyp {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
  };
  std::vector<Hyp> beam{{}};
  std::vector<DecodeResult> finished;

  for (std::int32_t step = 0; step < max_len && !beam.empty(); ++step) {
    // enough completed hypotheses to fill the n-best list
    if (static_cast<std::int32_t>(finished.size()) >= beam_size) {
      beam.clear();
      break;
    }
    // replicate the encoder output over the live hypotheses
    const std::int64_t n = static_cast<std::int64_t>(beam.size());
    Tensor enc = Tensor::zeros({n, enc1.dim(1), enc1.dim(2)});
    for (std::int64_t r = 0; r < n; ++r) {
      std::copy(enc1.data.begin(), enc1.data.end(), enc.data.begin() + r * enc1.numel());
    }
    std::vector<std::int32_t> lens(static_cast<std::size_t>(n), src_lens[0]);
    std::vector<std::vector<TokenId>> prefixes;
    prefixes.reserve(beam.size());
    for (const Hyp& h : beam) prefixes.push_back(h.tokens);
    const auto dist = decode_step(params, enc, lens, prefixes);

    struct Cand {
      std::size_t hyp;
      TokenId token;
      double log_prob;
    };
    std::vector<Cand> cands;
    for (std::size_t hi = 0; hi < beam.size(); ++hi) {
      const auto& lsm = dist[hi];
      for (TokenId t = 0; t < static_cast<TokenId>(lsm.size()); ++t) {
        if (!token_allowed(vocab, t, step == 0)) continue;
        cands.push_back({hi, t, beam[hi].log_prob + lsm[static_cast<std::size_t>(t)]});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.token != b.token) return a.token < b.token;
      return a.hyp < b.hyp;
    });

    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (static_cast<std::int32_t>(next.size()) >= beam_size) break;
      if (c.token == Vocabulary::eos_id) {
        DecodeResult done;
        done.sentence = Sentence{beam[c.hyp].tokens, tgt_lang};
        done.log_prob = c.log_prob;
        finished.push_back(std::move(done));
        continue;  // retire; the slot goes to the next best continuation
      }
      Hyp h = beam[c.hyp];
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }
  for (const Hyp& h : beam) {
    DecodeResult trunc;
    trunc.sentence = Sentence{h.tokens, tgt_lang};
    trunc.log_prob = h.log_prob;
    trunc.truncated = true;
    finished.push_back(std::move(trunc));
  }

  // The greedy hypothesis always competes, so the returned best can never
  // score below it.
  finished.push_back(greedy_decode(params, vocab, src, tgt_lang, max_len));

  std::sort(finished.begin(), finished.end(), [](const DecodeResult& a, const DecodeResult& b) {
    const double sa = a.normalized_score(), sb = b.normalized_score();
    if (sa != sb) return sa > sb;
    return a.sentence.tokens < b.sentence.tokens;
  });
  BeamResult out;
  for (const DecodeResult& r : finished) {
    if (!out.nbest.empty()) {
      bool dup = false;
      for (const DecodeResult& kept : out.nbest) {
        if (kept.sentence.tokens == r.sentence.tokens) {
          dup = true;
          break;
        }
      }
      if (dup) continue;
    }
    out.nbest.push_back(r);
    if (static_cast<std::int32_t>(out.nbest.size()) >= beam_size) break;
  }
  out.best = out.nbest.front();
  return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'U', 'N', 'M', 'T', 'C', 'P', '1'};

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"layers", cfg.layers},   {"hidden", cfg.hidden},       {"heads", cfg.heads},
          {"ffn_mult", cfg.ffn_mult}, {"max_len", cfg.max_len},   {"vocab_size", cfg.vocab_size},
          {"dropout", cfg.dropout}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.layers = j.at("layers").get<std::int32_t>();
  cfg.hidden = j.at("hidden").get<std::int32_t>();
  cfg.heads = j.at("heads").get<std::int32_t>();
  cfg.ffn_mult = j.at("ffn_mult").get<std::int32_t>();
  cfg.max_len = j.at("max_len").get<std::int32_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::int32_t>();
  cfg.dropout = j.at("dropout").get<double>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = config_to_json(ckpt.config);
  header["vocab_hash"] = ckpt.vocab_hash;
  header["step"] = ckpt.step;
  header["extra"] = ckpt.extra_json;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) table.push_back({{"name", name}, {"shape", t.shape}});
  header["tensors"] = std::move(table);
  const std::string hdr = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t hlen = hdr.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path + ": not a checkpoint file");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen == 0 || hlen > (1u << 26)) throw DataError(path + ": corrupt header length");
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError(path + ": truncated header");
  nlohmann::json header = nlohmann::json::parse(hdr, nullptr, false);
  if (header.is_discarded() || header.value("version", 0) != 1) {
    throw DataError(path + ": unsupported checkpoint header");
  }

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  ckpt.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.extra_json = header.value("extra", std::string{});
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<std::int64_t> shape = entry.at("shape").get<std::vector<std::int64_t>>();
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated tensor payload for '" + name + "'");
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  return ckpt;
}

void require_compatible(const Checkpoint& ckpt, const ModelConfig& cfg, std::uint64_t vocab_hash) {
  if (ckpt.vocab_hash != vocab_hash) {
    throw DataError("checkpoint: vocabulary hash mismatch");
  }
  if (!(ckpt.config == cfg)) {
    throw DataError("checkpoint: model configuration mismatch");
  }
}

}  // namespace cunmt
