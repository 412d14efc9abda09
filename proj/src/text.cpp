#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "aqg/errors.hpp"
#include "aqg/text.hpp"

namespace aqg {

namespace {

constexpr const char* kSpecialTokens[kNumSpecialTokens] = {"<pad>", "<s>", "</s>",
                                                           "<unk>", "<sep>"};

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c) != 0; }

}  // namespace

// ---- tokenization ----------------------------------------------------------

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_punct(c)) {
      out.push_back({std::string(1, static_cast<char>(c)), i, i + 1});
      ++i;
    } else {
      const std::size_t start = i;
      std::string word;
      while (i < text.size()) {
        const auto w = static_cast<unsigned char>(text[i]);
        if (is_space(w) || is_punct(w)) break;
        word.push_back(w < 128 ? static_cast<char>(std::tolower(w)) : static_cast<char>(w));
        ++i;
      }
      out.push_back({std::move(word), start, i});
    }
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(std::move(t.text));
  return out;
}

// ---- vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialTokens) add(s);
}

void Vocabulary::add(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const RawExample> corpus, std::size_t max_size) {
  if (max_size < kNumSpecialTokens + 1) {
    throw ConfigError("vocabulary max_size must be >= 6, got " + std::to_string(max_size));
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& ex : corpus) {
    for (auto* text : {&ex.passage, &ex.question, &ex.answer}) {
      for (auto& tok : tokenize(*text)) ++counts[std::move(tok)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, stable_sort keeps it for ties.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  const std::size_t keep = std::min(ranked.size(), max_size - kNumSpecialTokens);
  for (std::size_t i = 0; i < keep; ++i) {
    if (!v.contains(ranked[i].first)) v.add(ranked[i].first);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (v.contains(t)) throw ConfigError("duplicate vocabulary token '" + t + "'");
    v.add(t);
  }
  return v;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary file " + path.string());
  Vocabulary v;
  v.tokens_.clear();
  v.index_.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>id");
    }
    const std::string tok = line.substr(0, tab);
    long id = -1;
    try {
      id = std::stol(line.substr(tab + 1));
    } catch (const std::exception&) {
    }
    if (id != static_cast<long>(v.tokens_.size())) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": ids must be consecutive from 0");
    }
    v.add(tok);
  }
  for (std::size_t i = 0; i < kNumSpecialTokens; ++i) {
    if (v.tokens_.size() <= i || v.tokens_[i] != kSpecialTokens[i]) {
      throw DataError(path.string() + ": special tokens missing from ids 0..4");
    }
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab,
                            std::size_t max_len) {
  std::vector<TokenId> ids;
  for (const auto& tok : tokenize_with_offsets(text)) {
    if (ids.size() >= max_len) break;
    ids.push_back(vocab.id(tok.text));
  }
  return ids;
}

std::vector<std::string> ids_to_tokens(std::span<const TokenId> ids,
                                       const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (auto id : ids) {
    if (id == kEosId) break;
    if (id == kPadId || id == kBosId) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

TokenizedExample tokenize_example(const RawExample& ex, const Vocabulary& vocab,
                                  const TextLimits& limits) {
  TokenizedExample t;
  t.id = ex.id;
  t.passage = encode(ex.passage, vocab, limits.passage);
  t.question = encode(ex.question, vocab, limits.question);
  t.answer = encode(ex.answer, vocab, limits.answer);
  t.answer_start = ex.answer_start;
  t.answer_end = ex.answer_end();
  return t;
}

// ---- conditioning ----------------------------------------------------------

SentenceSelection select_answer_sentences(std::string_view passage,
                                          std::string_view /*answer*/,
                                          std::size_t begin, std::size_t end) {
  if (begin > end || end > passage.size()) {
    throw DataError("answer span [" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") outside passage of length " + std::to_string(passage.size()));
  }
  if (begin == end) return {std::string(passage), true};

  struct Sentence {
    std::size_t begin, end;
  };
  std::vector<Sentence> sentences;
  std::size_t start = 0;
  for (std::size_t i = 0; i < passage.size(); ++i) {
    const char c = passage[i];
    const bool terminal = (c == '.' || c == '?' || c == '!') && i + 1 < passage.size() &&
                          is_space(static_cast<unsigned char>(passage[i + 1]));
    if (terminal) {
      sentences.push_back({start, i + 1});
      std::size_t next = i + 1;
      while (next < passage.size() && is_space(static_cast<unsigned char>(passage[next]))) {
        ++next;
      }
      start = next;
      i = next - 1;
    }
  }
  if (start < passage.size()) sentences.push_back({start, passage.size()});

  std::size_t first = passage.size(), last = 0;
  for (const auto& s : sentences) {
    if (s.begin < end && begin < s.end) {
      first = std::min(first, s.begin);
      last = std::max(last, s.end);
    }
  }
  if (first >= last) {
    // The span only covers inter-sentence whitespace.
    return {std::string(passage), true};
  }
  // a span reaching into the whitespace between sentences keeps that whitespace
  first = std::min(first, begin);
  last = std::max(last, end);
  return {std::string(passage.substr(first, last - first)), false};
}

std::vector<TokenId> build_ap_input(std::span<const TokenId> answer_ids,
                                    std::span<const TokenId> passage_ids,
                                    bool use_separator, std::size_t max_len,
                                    std::size_t max_answer) {
  const std::size_t b = std::min(answer_ids.size(), std::min(max_answer, max_len));
  std::vector<TokenId> out(answer_ids.begin(), answer_ids.begin() + static_cast<long>(b));
  if (use_separator && out.size() < max_len) out.push_back(kSepId);
  for (auto id : passage_ids) {
    if (out.size() >= max_len) break;
    out.push_back(id);
  }
  return out;
}

IdBatch IdBatch::pad(const std::vector<std::vector<TokenId>>& seqs) {
  IdBatch b;
  b.rows = seqs.size();
  b.cols = 1;
  for (const auto& s : seqs) b.cols = std::max(b.cols, s.size());
  b.ids.assign(b.rows * b.cols, kPadId);
  b.mask.assign(b.rows * b.cols, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    for (std::size_t c = 0; c < seqs[r].size(); ++c) {
      b.ids[r * b.cols + c] = seqs[r][c];
      b.mask[r * b.cols + c] = 1;
    }
  }
  return b;
}

std::size_t IdBatch::length(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols; ++c) n += mask[row * cols + c];
  return n;
}

std::vector<TokenId> make_source(const RawExample& ex, const ConditioningConfig& cond,
                                 const Vocabulary& vocab, const TextLimits& limits,
                                 bool* rs_fallback) {
  std::vector<TokenId> passage_ids;
  if (cond.rs) {
    auto sel = select_answer_sentences(ex.passage, ex.answer, ex.answer_start, ex.answer_end());
    if (rs_fallback) *rs_fallback = sel.fallback;
    passage_ids = encode(sel.text, vocab, limits.passage);
  } else {
    passage_ids = encode(ex.passage, vocab, limits.passage);
  }
  if (!cond.ap) return passage_ids;
  const auto answer_ids = encode(ex.answer, vocab, limits.answer);
  return build_ap_input(answer_ids, passage_ids, cond.ap_separator, limits.passage,
                        limits.answer);
}

std::vector<TokenId> make_answer(const RawExample& ex, const Vocabulary& vocab,
                                 const TextLimits& limits) {
  auto ids = encode(ex.answer, vocab, limits.answer);
  // Answer pooling is undefined on an empty sequence.
  if (ids.empty()) ids.push_back(kUnkId);
  return ids;
}

Batch make_batch(std::span<const RawExample> examples, const ConditioningConfig& cond,
                 const Vocabulary& vocab, const TextLimits& limits) {
  Batch batch;
  std::vector<std::vector<TokenId>> sources, answers, dec_in, labels;
  for (const auto& ex : examples) {
    batch.example_ids.push_back(ex.id);
    bool fallback = false;
    sources.push_back(make_source(ex, cond, vocab, limits, &fallback));
    batch.rs_fallbacks += fallback ? 1 : 0;
    answers.push_back(make_answer(ex, vocab, limits));
    const auto q = encode(ex.question, vocab, limits.question);
    std::vector<TokenId> in{kBosId};
    in.insert(in.end(), q.begin(), q.end());
    std::vector<TokenId> out(q.begin(), q.end());
    out.push_back(kEosId);
    dec_in.push_back(std::move(in));
    labels.push_back(std::move(out));
  }
  batch.source = IdBatch::pad(sources);
  batch.answer = IdBatch::pad(answers);
  batch.decoder_input = IdBatch::pad(dec_in);
  const auto padded = IdBatch::pad(labels);
  batch.labels.resize(padded.ids.size());
  for (std::size_t i = 0; i < padded.ids.size(); ++i) {
    batch.labels[i] = padded.mask[i] ? padded.ids[i] : -1;
  }
  return batch;
}

}  // namespace aqg
