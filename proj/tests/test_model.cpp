#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cunmt/errors.hpp"
#include "cunmt/model.hpp"
#include "cunmt/optim.hpp"

using namespace cunmt;

namespace {

Vocabulary tiny_vocab(int langs = 2, int content = 16) {
  std::vector<std::string> names;
  for (int i = 0; i < langs; ++i) names.push_back("L" + std::to_string(i));
  return Vocabulary(std::move(names), content);
}

ModelConfig tiny_config(const Vocabulary& vocab) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 32;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.max_len = 8;
  cfg.vocab_size = vocab.size();
  return cfg;
}

// Minimal Adam loop over explicit rows; the real trainer lives elsewhere.
void overfit(ModelParams& params, const Vocabulary& vocab,
             const std::vector<std::pair<Sentence, Sentence>>& rows, int steps, double lr) {
  std::vector<Tensor> shapes;
  for (auto& [n, t] : params.named) shapes.push_back(Tensor::zeros(t.shape));
  AdamState st = AdamState::init_like(shapes);
  Batch batch = make_batch(rows);
  for (int s = 0; s < steps; ++s) {
    Graph g;
    BoundParams bound = bind_params(g, params, true);
    ForwardNodes fwd = model_forward_loss(g, bound, params, vocab, batch);
    GradMap grads = g.backward(fwd.loss);
    auto ptrs = params.tensor_ptrs();
    std::vector<const Tensor*> gs;
    for (auto& [name, id] : bound.ids) gs.push_back(&grads.at(id));
    adam_step(ptrs, gs, st, lr);
  }
}

Sentence sent(std::vector<TokenId> toks, LangId lang) { return Sentence{std::move(toks), lang}; }

}  // namespace

TEST_CASE("model init is deterministic and normalization starts at identity") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto a = init_model(cfg, 7);
  auto b = init_model(cfg, 7);
  REQUIRE(a.named.size() == b.named.size());
  for (std::size_t i = 0; i < a.named.size(); ++i) {
    CHECK(a.named[i].first == b.named[i].first);
    CHECK(a.named[i].second.data == b.named[i].second.data);
  }
  auto c = init_model(cfg, 8);
  CHECK(a.content_hash() != c.content_hash());

  for (auto& [name, t] : a.named) {
    if (name.ends_with("ln.g") || name.ends_with("ln1.g") || name.ends_with("ln2.g") ||
        name.ends_with("ln3.g")) {
      for (double v : t.data) CHECK(v == 1.0);
    }
    if (name.ends_with("ln.b") || name.ends_with("ln1.b") || name.ends_with("ln2.b") ||
        name.ends_with("ln3.b")) {
      for (double v : t.data) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("parameter count matches the closed-form layer arithmetic") {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 64;
  cfg.heads = 4;
  cfg.ffn_mult = 4;
  cfg.max_len = 16;
  cfg.vocab_size = 128;
  auto params = init_model(cfg, 1);

  const std::int64_t H = cfg.hidden, F = static_cast<std::int64_t>(cfg.ffn_mult) * H;
  const std::int64_t V = cfg.vocab_size, P = cfg.max_len + 2, L = cfg.layers;
  const std::int64_t attn = 4 * (H * H + H);
  const std::int64_t ffn = (H * F + F) + (F * H + H);
  const std::int64_t enc_layer = attn + ffn + 4 * H;
  const std::int64_t dec_layer = 2 * attn + ffn + 6 * H;
  const std::int64_t expect = V * H + P * H + L * enc_layer + L * dec_layer + 4 * H;
  CHECK(params.total_param_count() == expect);
}

TEST_CASE("fresh model scores are near uniform and distributions normalize") {
  auto vocab = tiny_vocab(3, 128);
  auto cfg = tiny_config(vocab);
  cfg.hidden = 64;
  cfg.heads = 4;
  auto params = init_model(cfg, 3);
  Sentence src = sent({vocab.first_content(), vocab.first_content() + 2}, 0);
  Sentence tgt = sent({vocab.first_content() + 5, vocab.first_content() + 1}, 1);
  auto res = score(params, vocab, src, tgt, 1);
  REQUIRE(res.token_log_probs.size() == 3);  // two tokens + eos
  for (double lp : res.token_log_probs) {
    CHECK(std::fabs(-lp - std::log(128.0)) < 0.5);
  }
  CHECK(res.total == doctest::Approx(res.token_log_probs[0] + res.token_log_probs[1] +
                                     res.token_log_probs[2]));
}

TEST_CASE("scores are invariant to batch padding") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 11);
  Sentence short_src = sent({vocab.first_content() + 1, vocab.first_content() + 2}, 0);
  Sentence short_tgt = sent({vocab.first_content() + 3}, 1);
  Sentence long_src = sent({vocab.first_content() + 4, vocab.first_content() + 5,
                            vocab.first_content() + 6, vocab.first_content() + 7,
                            vocab.first_content() + 8},
                           0);
  Sentence long_tgt = sent({vocab.first_content() + 9, vocab.first_content() + 10,
                            vocab.first_content() + 11, vocab.first_content() + 12},
                           1);
  auto single = score(params, vocab, short_src, short_tgt, 1);
  auto batched = score_batch(params, vocab, {{short_src, short_tgt}, {long_src, long_tgt}});
  REQUIRE(batched[0].token_log_probs.size() == single.token_log_probs.size());
  for (std::size_t i = 0; i < single.token_log_probs.size(); ++i) {
    CHECK(batched[0].token_log_probs[i] == doctest::Approx(single.token_log_probs[i]).epsilon(1e-9));
  }
}

TEST_CASE("causal masking: a position's score ignores later target tokens") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 13);
  Sentence src = sent({vocab.first_content(), vocab.first_content() + 1}, 0);
  Sentence tgt_a = sent({vocab.first_content() + 2, vocab.first_content() + 3,
                         vocab.first_content() + 4},
                        1);
  Sentence tgt_b = tgt_a;
  tgt_b.tokens[2] = vocab.first_content() + 9;  // change only the last token
  auto sa = score(params, vocab, src, tgt_a, 1);
  auto sb = score(params, vocab, src, tgt_b, 1);
  CHECK(sa.token_log_probs[0] == doctest::Approx(sb.token_log_probs[0]).epsilon(1e-12));
  CHECK(sa.token_log_probs[1] == doctest::Approx(sb.token_log_probs[1]).epsilon(1e-12));
  CHECK(sa.token_log_probs[2] == doctest::Approx(sb.token_log_probs[2]).epsilon(1e-12));
  CHECK(sa.token_log_probs[3] != sb.token_log_probs[3]);
}

TEST_CASE("tied embeddings feel gradients from both the input and output side") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 17);
  const TokenId src_only = vocab.first_content() + 1;
  const TokenId tgt_only = vocab.first_content() + 2;
  Batch batch = make_batch({{sent({src_only}, 0), sent({tgt_only}, 1)}});

  Graph g;
  BoundParams bound = bind_params(g, params, true);
  ForwardNodes fwd = model_forward_loss(g, bound, params, vocab, batch);
  GradMap grads = g.backward(fwd.loss);
  const Tensor& ge = grads.at(bound.at("embed"));
  const std::int64_t H = cfg.hidden;
  auto row_norm = [&](TokenId t) {
    double s = 0.0;
    for (std::int64_t j = 0; j < H; ++j) s += std::fabs(ge.at(t, j));
    return s;
  };
  CHECK(row_norm(src_only) > 0.0);  // input side only
  CHECK(row_norm(tgt_only) > 0.0);  // output side only (never a decoder input)
}

TEST_CASE("overfitting one pair makes greedy reproduce it") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 19);
  Sentence src = sent({vocab.first_content() + 4, vocab.first_content() + 7,
                       vocab.first_content() + 2},
                      0);
  Sentence tgt = sent({vocab.first_content() + 9, vocab.first_content() + 3}, 1);
  overfit(params, vocab, {{src, tgt}}, 300, 3e-3);
  auto out = greedy_decode(params, vocab, src, 1, cfg.max_len);
  CHECK(!out.truncated);
  CHECK(out.sentence.tokens == tgt.tokens);
}

TEST_CASE("the target-language tag selects the decoded language") {
  auto vocab = tiny_vocab(3, 16);
  auto cfg = tiny_config(vocab);
  cfg.vocab_size = vocab.size();
  auto params = init_model(cfg, 23);
  Sentence src = sent({vocab.first_content() + 1, vocab.first_content() + 2}, 0);
  Sentence tgt1 = sent({vocab.first_content() + 5, vocab.first_content() + 6}, 1);
  Sentence tgt2 = sent({vocab.first_content() + 10, vocab.first_content() + 11}, 2);
  overfit(params, vocab, {{src, tgt1}, {src, tgt2}}, 400, 3e-3);
  auto out1 = greedy_decode(params, vocab, src, 1, cfg.max_len);
  auto out2 = greedy_decode(params, vocab, src, 2, cfg.max_len);
  CHECK(out1.sentence.tokens == tgt1.tokens);
  CHECK(out2.sentence.tokens == tgt2.tokens);
}

TEST_CASE("greedy decoding is deterministic and never empty") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 29);
  Sentence src = sent({vocab.first_content() + 3}, 0);
  auto a = greedy_decode(params, vocab, src, 1, cfg.max_len);
  auto b = greedy_decode(params, vocab, src, 1, cfg.max_len);
  CHECK(a.sentence == b.sentence);
  CHECK(a.log_prob == b.log_prob);
  const bool nonempty_or_truncated = !a.sentence.tokens.empty() || a.truncated;
  CHECK(nonempty_or_truncated);
  CHECK(!a.sentence.tokens.empty());
  for (TokenId t : a.sentence.tokens) CHECK(vocab.is_content(t));
}

TEST_CASE("beam properties: beam-1 equals greedy, wider beams never lose to greedy") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  for (std::uint64_t seed : {31, 37, 41}) {
    auto params = init_model(cfg, seed);
    for (int len = 1; len <= 4; ++len) {
      std::vector<TokenId> toks;
      for (int i = 0; i < len; ++i) toks.push_back(vocab.first_content() + (static_cast<int>(seed) + i * 3) % 16);
      Sentence src = sent(toks, 0);
      auto greedy = greedy_decode(params, vocab, src, 1, cfg.max_len);
      auto beam1 = beam_decode(params, vocab, src, 1, 1, cfg.max_len);
      CHECK(beam1.best.sentence == greedy.sentence);
      auto beam4 = beam_decode(params, vocab, src, 1, 4, cfg.max_len);
      CHECK(beam4.best.normalized_score() >= greedy.normalized_score() - 1e-12);
      for (std::size_t i = 1; i < beam4.nbest.size(); ++i) {
        CHECK(beam4.nbest[i - 1].normalized_score() >= beam4.nbest[i].normalized_score());
        for (std::size_t j = 0; j < i; ++j) {
          CHECK(beam4.nbest[j].sentence.tokens != beam4.nbest[i].sentence.tokens);
        }
      }
    }
  }
}

TEST_CASE("over-length inputs are rejected") {
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 43);
  std::vector<TokenId> toks(static_cast<std::size_t>(cfg.max_len) + 1, vocab.first_content());
  Sentence src = sent(toks, 0);
  Sentence tgt = sent({vocab.first_content()}, 1);
  CHECK_THROWS_AS(score(params, vocab, src, tgt, 1), ContractError);
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  namespace fs = std::filesystem;
  auto vocab = tiny_vocab();
  auto cfg = tiny_config(vocab);
  auto params = init_model(cfg, 47);
  const auto dir = fs::temp_directory_path() / "cunmt_ckpt_test";
  fs::create_directories(dir);
  const auto path = (dir / "model.ckpt").string();

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab_hash = vocab.hash();
  ckpt.step = 123;
  ckpt.tensors = params.named;
  ckpt.extra_json = "{\"round\":5}";
  save_checkpoint(path, ckpt);

  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.step == 123);
  CHECK(loaded.extra_json == ckpt.extra_json);
  REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    CHECK(loaded.tensors[i].first == ckpt.tensors[i].first);
    CHECK(loaded.tensors[i].second.data == ckpt.tensors[i].second.data);
  }
  CHECK_NOTHROW(require_compatible(loaded, cfg, vocab.hash()));
  CHECK_THROWS_AS(require_compatible(loaded, cfg, vocab.hash() + 1), DataError);
  ModelConfig other = cfg;
  other.hidden *= 2;
  CHECK_THROWS_AS(require_compatible(loaded, other, vocab.hash()), DataError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), IoError);
  fs::remove_all(dir);
}
