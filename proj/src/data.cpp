#include "cunmt/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cunmt/errors.hpp"

namespace cunmt {

std::uint64_t sentence_hash(const Sentence& s) {
  std::uint64_t h = mix64(0x5e41 ^ static_cast<std::uint64_t>(s.lang));
  for (TokenId t : s.tokens) h = mix64(h ^ static_cast<std::uint64_t>(t));
  return h;
}

Sentence apply_noise(const Sentence& x, const NoiseConfig& cfg, Rng& rng) {
  if (x.tokens.empty()) throw ContractError("apply_noise: empty sentence");
  if (cfg.p_drop < 0 || cfg.p_drop > 1 || cfg.p_blank < 0 || cfg.p_blank > 1 ||
      cfg.swap_window < 0) {
    throw ConfigError("apply_noise: invalid noise configuration");
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  // Dropout first; keep one uniformly chosen token if everything fell.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < x.tokens.size(); ++i) {
    if (cfg.p_drop == 0.0 || coin(rng) >= cfg.p_drop) kept.push_back(i);
  }
  if (kept.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, x.tokens.size() - 1);
    kept.push_back(pick(rng));
  }

  std::vector<TokenId> tokens;
  tokens.reserve(kept.size());
  for (std::size_t i : kept) {
    TokenId t = x.tokens[i];
    if (cfg.p_blank > 0.0 && coin(rng) < cfg.p_blank) t = Vocabulary::blank_id;
    tokens.push_back(t);
  }

  // Bounded shuffle: sorting by i + U[0, k+1) moves no element more than k
  // positions from its origin.
  if (cfg.swap_window > 0 && tokens.size() > 1) {
    std::vector<std::pair<double, std::size_t>> keys(tokens.size());
    std::uniform_real_distribution<double> jitter(0.0, static_cast<double>(cfg.swap_window) + 1.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      keys[i] = {static_cast<double>(i) + jitter(rng), i};
    }
    std::stable_sort(keys.begin(), keys.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<TokenId> shuffled(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) shuffled[i] = tokens[keys[i].second];
    tokens = std::move(shuffled);
  }

  return Sentence{std::move(tokens), x.lang};
}

Batch make_batch(const std::vector<std::pair<Sentence, Sentence>>& rows) {
  if (rows.empty()) throw ContractError("make_batch: empty row list");
  Batch b;
  b.rows = static_cast<std::int64_t>(rows.size());
  for (const auto& [src, tgt] : rows) {
    if (src.tokens.empty() || tgt.tokens.empty()) {
      throw ContractError("make_batch: empty sentence in row");
    }
    b.src_width = std::max(b.src_width, static_cast<std::int64_t>(src.tokens.size()));
    b.tgt_width = std::max(b.tgt_width, static_cast<std::int64_t>(tgt.tokens.size()) + 1);
  }
  b.src.assign(static_cast<std::size_t>(b.rows * b.src_width), Vocabulary::pad_id);
  b.tgt_in.assign(static_cast<std::size_t>(b.rows * b.tgt_width), Vocabulary::pad_id);
  b.tgt_out.assign(static_cast<std::size_t>(b.rows * b.tgt_width), Vocabulary::pad_id);
  for (std::int64_t r = 0; r < b.rows; ++r) {
    const auto& [src, tgt] = rows[static_cast<std::size_t>(r)];
    b.src_len.push_back(static_cast<std::int32_t>(src.tokens.size()));
    b.tgt_len.push_back(static_cast<std::int32_t>(tgt.tokens.size()) + 1);
    b.src_lang.push_back(src.lang);
    b.tgt_lang.push_back(tgt.lang);
    std::copy(src.tokens.begin(), src.tokens.end(), b.src.begin() + r * b.src_width);
    auto* tin = b.tgt_in.data() + r * b.tgt_width;
    auto* tout = b.tgt_out.data() + r * b.tgt_width;
    tin[0] = Vocabulary::bos_id;
    std::copy(tgt.tokens.begin(), tgt.tokens.end(), tin + 1);
    std::copy(tgt.tokens.begin(), tgt.tokens.end(), tout);
    tout[tgt.tokens.size()] = Vocabulary::eos_id;
  }
  return b;
}

Sentence batch_src_sentence(const Batch& b, std::int64_t r) {
  Sentence s;
  s.lang = b.src_lang[static_cast<std::size_t>(r)];
  const auto len = b.src_len[static_cast<std::size_t>(r)];
  s.tokens.assign(b.src.begin() + r * b.src_width, b.src.begin() + r * b.src_width + len);
  return s;
}

Sentence batch_tgt_sentence(const Batch& b, std::int64_t r) {
  Sentence s;
  s.lang = b.tgt_lang[static_cast<std::size_t>(r)];
  const auto len = b.tgt_len[static_cast<std::size_t>(r)] - 1;  // drop eos
  s.tokens.assign(b.tgt_out.begin() + r * b.tgt_width, b.tgt_out.begin() + r * b.tgt_width + len);
  return s;
}

std::vector<Sentence> sample_mono(const MonoCorpus& corpus, std::int64_t batch_size, Rng& rng) {
  if (corpus.sentences.empty()) throw DataError("sample_mono: empty corpus");
  std::uniform_int_distribution<std::size_t> pick(0, corpus.sentences.size() - 1);
  std::vector<Sentence> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (std::int64_t i = 0; i < batch_size; ++i) out.push_back(corpus.sentences[pick(rng)]);
  return out;
}

std::vector<std::pair<Sentence, Sentence>> sample_parallel(const ParallelCorpus& corpus,
                                                           std::int64_t batch_size, Rng& rng) {
  if (corpus.rows.empty()) throw DataError("sample_parallel: empty corpus");
  std::uniform_int_distribution<std::size_t> pick(0, corpus.rows.size() - 1);
  std::vector<std::pair<Sentence, Sentence>> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (std::int64_t i = 0; i < batch_size; ++i) out.push_back(corpus.rows[pick(rng)]);
  return out;
}

namespace {

std::string render_tokens(const std::vector<TokenId>& tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) os << ' ';
    os << tokens[i];
  }
  return os.str();
}

std::vector<TokenId> parse_tokens(const std::string& text, const std::string& path) {
  std::istringstream is(text);
  std::vector<TokenId> tokens;
  long long v;
  while (is >> v) tokens.push_back(static_cast<TokenId>(v));
  if (!is.eof()) throw DataError(path + ": malformed token line '" + text + "'");
  if (tokens.empty()) throw DataError(path + ": empty sentence line");
  return tokens;
}

}  // namespace

void write_mono_corpus(const std::string& path, const MonoCorpus& corpus,
                       const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "lang=" << vocab.lang_name(corpus.lang) << "\n";
  for (const Sentence& s : corpus.sentences) out << render_tokens(s.tokens) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

MonoCorpus read_mono_corpus(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("lang=", 0) != 0) {
    throw DataError(path + ": expected 'lang=<name>' header");
  }
  MonoCorpus corpus;
  corpus.lang = vocab.lang_by_name(header.substr(5));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    corpus.sentences.push_back(Sentence{parse_tokens(line, path), corpus.lang});
  }
  return corpus;
}

void write_parallel_corpus(const std::string& path, const ParallelCorpus& corpus,
                           const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "pair=" << vocab.lang_name(corpus.pair.first) << "," << vocab.lang_name(corpus.pair.second)
      << "\n";
  for (const auto& [src, tgt] : corpus.rows) {
    out << render_tokens(src.tokens) << "\t" << render_tokens(tgt.tokens) << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

ParallelCorpus read_parallel_corpus(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("pair=", 0) != 0) {
    throw DataError(path + ": expected 'pair=<a>,<b>' header");
  }
  const std::string spec = header.substr(5);
  const auto comma = spec.find(',');
  if (comma == std::string::npos) throw DataError(path + ": malformed pair header");
  ParallelCorpus corpus;
  corpus.pair = {vocab.lang_by_name(spec.substr(0, comma)), vocab.lang_by_name(spec.substr(comma + 1))};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ": row without tab separator");
    corpus.rows.push_back({Sentence{parse_tokens(line.substr(0, tab), path), corpus.pair.first},
                           Sentence{parse_tokens(line.substr(tab + 1), path), corpus.pair.second}});
  }
  return corpus;
}

}  // namespace cunmt
