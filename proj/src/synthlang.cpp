#include "cunmt/synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "cunmt/errors.hpp"

namespace cunmt {

std::uint64_t LanguageDef::cipher_hash() const {
  std::uint64_t h = mix64(0xc1f3 ^ static_cast<std::uint64_t>(reorder_period));
  for (TokenId t : cipher) h = mix64(h ^ static_cast<std::uint64_t>(t));
  return h;
}

LanguageDef make_language(const Vocabulary& vocab, LangId lang, std::int32_t reorder_period,
                          double similarity, std::uint64_t seed) {
  if (reorder_period < 1) throw ConfigError("make_language: reorder period must be >= 1");
  if (similarity < 0.0 || similarity > 1.0) {
    throw ConfigError("make_language: similarity must lie in [0,1]");
  }
  const std::int32_t v = vocab.content_size();
  LanguageDef def;
  def.lang = lang;
  def.reorder_period = reorder_period;
  def.similarity = similarity;
  def.similarity_seed = seed;

  Rng rng = derive_rng(seed, "cipher", {static_cast<std::uint64_t>(lang)});
  std::vector<std::int32_t> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_shared = static_cast<std::size_t>(std::lround(similarity * v));

  std::vector<TokenId> cipher(static_cast<std::size_t>(v), -1);
  for (std::size_t i = 0; i < n_shared; ++i) {
    const std::int32_t c = order[i];
    cipher[static_cast<std::size_t>(c)] = vocab.first_content() + c;
  }
  std::vector<std::int32_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_shared),
                                 order.end());
  std::vector<std::int32_t> targets = rest;
  std::shuffle(targets.begin(), targets.end(), rng);
  for (std::size_t i = 0; i < rest.size(); ++i) {
    cipher[static_cast<std::size_t>(rest[i])] = vocab.first_content() + targets[i];
  }

  def.cipher = std::move(cipher);
  def.decode.assign(static_cast<std::size_t>(v), -1);
  for (std::int32_t c = 0; c < v; ++c) {
    def.decode[static_cast<std::size_t>(def.cipher[static_cast<std::size_t>(c)] -
                                        vocab.first_content())] = c;
  }
  return def;
}

std::vector<std::int32_t> reorder_concepts(const std::vector<std::int32_t>& concepts,
                                           std::int32_t period) {
  if (period <= 1) return concepts;
  std::vector<std::int32_t> out = concepts;
  const auto n = static_cast<std::int64_t>(out.size());
  for (std::int64_t start = 0; start < n; start += period) {
    const std::int64_t end = std::min(n, start + period);
    std::reverse(out.begin() + start, out.begin() + end);
  }
  return out;
}

Sentence render_concepts(const std::vector<std::int32_t>& concepts, const LanguageDef& lang) {
  const auto ordered = reorder_concepts(concepts, lang.reorder_period);
  Sentence s;
  s.lang = lang.lang;
  s.tokens.reserve(ordered.size());
  for (std::int32_t c : ordered) s.tokens.push_back(lang.cipher[static_cast<std::size_t>(c)]);
  return s;
}

std::vector<std::int32_t> recover_concepts(const Sentence& x, const LanguageDef& lang,
                                           const Vocabulary& vocab) {
  std::vector<std::int32_t> concepts;
  concepts.reserve(x.tokens.size());
  for (TokenId t : x.tokens) {
    if (!vocab.is_content(t)) {
      throw ContractError("oracle: token " + std::to_string(t) + " outside the cipher range of '" +
                          vocab.lang_name(lang.lang) + "'");
    }
    concepts.push_back(lang.decode[static_cast<std::size_t>(t - vocab.first_content())]);
  }
  // block reversal is an involution: applying it again undoes the render
  return reorder_concepts(concepts, lang.reorder_period);
}

Sentence oracle_translate(const Sentence& x, const LanguageDef& from, const LanguageDef& to,
                          const Vocabulary& vocab) {
  if (x.lang != from.lang) {
    throw ContractError("oracle_translate: sentence language " + std::to_string(x.lang) +
                        " does not match source language " + std::to_string(from.lang));
  }
  return render_concepts(recover_concepts(x, from, vocab), to);
}

std::uint64_t concept_hash(const std::vector<std::int32_t>& concepts) {
  std::uint64_t h = 0x9dc5;
  for (std::int32_t c : concepts) h = mix64(h ^ static_cast<std::uint64_t>(c));
  return h;
}

namespace {

// Zipf unigram sampler over concept ids.
class ConceptSampler {
 public:
  ConceptSampler(std::int32_t vocab, double exponent) : cdf_(static_cast<std::size_t>(vocab)) {
    double acc = 0.0;
    for (std::int32_t c = 0; c < vocab; ++c) {
      acc += 1.0 / std::pow(static_cast<double>(c + 1), exponent);
      cdf_[static_cast<std::size_t>(c)] = acc;
    }
    for (double& v : cdf_) v /= acc;
  }

  std::int32_t draw(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), r);
    return static_cast<std::int32_t>(std::min<std::ptrdiff_t>(
        it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
  }

 private:
  std::vector<double> cdf_;
};

std::vector<std::int32_t> draw_sentence(const ConceptSampler& sampler, const GenSpec& spec,
                                        Rng& rng) {
  std::uniform_int_distribution<std::int32_t> len_dist(spec.len_min, spec.len_max);
  std::vector<std::int32_t> concepts(static_cast<std::size_t>(len_dist(rng)));
  for (auto& c : concepts) c = sampler.draw(rng);
  return concepts;
}

// Draws `count` concept sentences whose hashes are new to `taken`.
std::vector<std::vector<std::int32_t>> draw_pool(const ConceptSampler& sampler, const GenSpec& spec,
                                                 std::int64_t count, Rng& rng,
                                                 std::unordered_set<std::uint64_t>& taken) {
  std::vector<std::vector<std::int32_t>> pool;
  pool.reserve(static_cast<std::size_t>(count));
  std::int64_t attempts = 0;
  const std::int64_t max_attempts = 60 * count + 1000;
  while (static_cast<std::int64_t>(pool.size()) < count) {
    if (++attempts > max_attempts) {
      throw DataError("gen_corpora: concept space too small for " + std::to_string(count) +
                      " disjoint sentences (lengths " + std::to_string(spec.len_min) + ".." +
                      std::to_string(spec.len_max) + ")");
    }
    auto concepts = draw_sentence(sampler, spec, rng);
    if (taken.insert(concept_hash(concepts)).second) pool.push_back(std::move(concepts));
  }
  return pool;
}

}  // namespace

FamilyCorpora gen_corpora(const std::vector<LanguageDef>& family, const Vocabulary& vocab,
                          const std::vector<std::pair<LangId, LangId>>& parallel_pairs,
                          const GenSpec& spec, std::uint64_t seed) {
  if (spec.len_min < 1 || spec.len_max < spec.len_min) {
    throw ConfigError("gen_corpora: invalid length range");
  }
  for (const auto& [a, b] : parallel_pairs) {
    if (a < 0 || b < 0 || a >= static_cast<LangId>(family.size()) ||
        b >= static_cast<LangId>(family.size()) || a == b) {
      throw ConfigError("gen_corpora: parallel pair references unknown language");
    }
  }
  const ConceptSampler sampler(vocab.content_size(), spec.zipf_exponent);
  FamilyCorpora out;

  for (const LanguageDef& def : family) {
    Rng rng = derive_rng(seed, "mono-pool", {static_cast<std::uint64_t>(def.lang)});
    auto pool = draw_pool(sampler, spec, spec.n_mono, rng, out.concept_hashes);
    MonoCorpus corpus;
    corpus.lang = def.lang;
    corpus.sentences.reserve(pool.size());
    for (const auto& concepts : pool) corpus.sentences.push_back(render_concepts(concepts, def));
    out.mono.push_back(std::move(corpus));
  }

  for (std::size_t pi = 0; pi < parallel_pairs.size(); ++pi) {
    const auto& [a, b] = parallel_pairs[pi];
    Rng rng = derive_rng(seed, "parallel-pool", {static_cast<std::uint64_t>(pi)});
    auto pool = draw_pool(sampler, spec, spec.n_parallel, rng, out.concept_hashes);
    ParallelCorpus corpus;
    corpus.pair = {a, b};
    corpus.rows.reserve(pool.size());
    for (const auto& concepts : pool) {
      corpus.rows.push_back({render_concepts(concepts, family[static_cast<std::size_t>(a)]),
                             render_concepts(concepts, family[static_cast<std::size_t>(b)])});
    }
    out.parallel.push_back(std::move(corpus));
  }
  return out;
}

ParallelCorpus gen_test_corpus(const std::vector<LanguageDef>& family, const Vocabulary& vocab,
                               LangId src, LangId tgt, std::int64_t n, const GenSpec& spec,
                               std::uint64_t seed,
                               const std::unordered_set<std::uint64_t>& taken) {
  const ConceptSampler sampler(vocab.content_size(), spec.zipf_exponent);
  std::unordered_set<std::uint64_t> pool_taken = taken;
  Rng rng = derive_rng(seed, "test-pool",
                       {static_cast<std::uint64_t>(src), static_cast<std::uint64_t>(tgt)});
  auto pool = draw_pool(sampler, spec, n, rng, pool_taken);
  ParallelCorpus corpus;
  corpus.pair = {src, tgt};
  corpus.rows.reserve(pool.size());
  for (const auto& concepts : pool) {
    corpus.rows.push_back({render_concepts(concepts, family[static_cast<std::size_t>(src)]),
                           render_concepts(concepts, family[static_cast<std::size_t>(tgt)])});
  }
  return corpus;
}

void write_family_meta(const std::string& path, const std::vector<LanguageDef>& family,
                       const Vocabulary& vocab, std::uint64_t data_seed) {
  nlohmann::json meta;
  meta["data_seed"] = data_seed;
  meta["vocab_hash"] = vocab.hash();
  meta["content_size"] = vocab.content_size();
  nlohmann::json langs = nlohmann::json::array();
  for (const LanguageDef& def : family) {
    langs.push_back({{"name", vocab.lang_name(def.lang)},
                     {"reorder_period", def.reorder_period},
                     {"similarity", def.similarity},
                     {"seed", def.similarity_seed},
                     {"cipher_hash", def.cipher_hash()}});
  }
  meta["languages"] = std::move(langs);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << meta.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace cunmt
