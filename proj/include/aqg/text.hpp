#pragma once

// Word-level tokenization, vocabulary, SQuAD ingestion and the input-side
// conditioning mechanisms (answer-sentence selection and answer prompting).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "aqg/conditioning.hpp"

namespace aqg {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kSepId = 4;
inline constexpr std::size_t kNumSpecialTokens = 5;

// Truncation limits in tokens.
struct TextLimits {
  std::size_t passage = 512;
  std::size_t question = 128;
  std::size_t answer = 32;
};

struct RawExample {
  std::string id;
  std::string passage;
  std::string question;
  std::string answer;
  std::size_t answer_start = 0;  // byte offset into passage

  std::size_t answer_end() const { return answer_start + answer.size(); }
};

class Vocabulary {
 public:
  // Specials only.
  Vocabulary();

  // Most frequent tokens over passages, questions and answers, up to
  // max_size - 5 of them; ties broken lexicographically.
  static Vocabulary build(std::span<const RawExample> corpus, std::size_t max_size);
  // Builds from explicit non-special tokens, in id order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  // `token<TAB>id` lines sorted by id.
  std::string serialize() const;

  TokenId id(std::string_view token) const;  // kUnkId when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSpan {
  std::string text;   // lowercased
  std::size_t begin;  // byte offsets into the source string
  std::size_t end;
};

// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
// character as its own token.
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab,
                            std::size_t max_len);
std::vector<std::string> ids_to_tokens(std::span<const TokenId> ids,
                                       const Vocabulary& vocab);
// Space-joined tokens; stops at EOS and drops PAD/BOS.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

struct TokenizedExample {
  std::string id;
  std::vector<TokenId> passage;
  std::vector<TokenId> question;
  std::vector<TokenId> answer;
  std::size_t answer_start = 0;
  std::size_t answer_end = 0;
};

TokenizedExample tokenize_example(const RawExample& ex, const Vocabulary& vocab,
                                  const TextLimits& limits = {});

// ---- SQuAD -----------------------------------------------------------------

struct SquadLoadResult {
  std::vector<RawExample> examples;
  std::size_t skipped = 0;  // answer text not found at the stated offset
};

// Reads SQuAD 1.1 JSON, taking the first answer of each question. When
// `keep_ids` is non-null only those question ids are returned.
SquadLoadResult load_squad(const std::filesystem::path& path,
                           const std::unordered_set<std::string>* keep_ids = nullptr);
SquadLoadResult load_squad_text(std::string_view json, const std::string& source_name,
                                const std::unordered_set<std::string>* keep_ids = nullptr);

// One id per line; blank lines ignored.
std::vector<std::string> read_id_list(const std::filesystem::path& path);

// Loads the examples whose ids appear in the split file, in dataset order.
SquadLoadResult load_squad_split(const std::filesystem::path& squad_path,
                                 const std::filesystem::path& split_ids_path);

// ---- conditioning ----------------------------------------------------------

struct SentenceSelection {
  std::string text;
  bool fallback = false;  // span empty: full passage returned
};

// Sentences end at '.', '?' or '!' followed by whitespace. Returns the
// passage slice covering every sentence that overlaps [begin, end).
SentenceSelection select_answer_sentences(std::string_view passage,
                                          std::string_view answer,
                                          std::size_t begin, std::size_t end);

// answer ++ [SEP] ++ passage, cut to max_len without ever cutting the
// (32-token) answer prefix.
std::vector<TokenId> build_ap_input(std::span<const TokenId> answer_ids,
                                    std::span<const TokenId> passage_ids,
                                    bool use_separator = true,
                                    std::size_t max_len = 512,
                                    std::size_t max_answer = 32);

// Row-major padded id matrix with a 0/1 validity mask.
struct IdBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  static IdBatch pad(const std::vector<std::vector<TokenId>>& seqs);
  std::size_t length(std::size_t row) const;
};

struct Batch {
  std::vector<std::string> example_ids;
  IdBatch source;         // encoder input after RS / AP
  IdBatch answer;         // answer tokens for AA / CP
  IdBatch decoder_input;  // BOS ++ question
  std::vector<TokenId> labels;  // question ++ EOS, -1 on padding
  std::size_t size() const { return source.rows; }
  std::size_t rs_fallbacks = 0;
};

// Builds encoder/decoder inputs for a group of examples. RS runs on the raw
// passage before encoding, then AP prefixes the answer.
Batch make_batch(std::span<const RawExample> examples, const ConditioningConfig& cond,
                 const Vocabulary& vocab, const TextLimits& limits = {});

// Encoder input for one example (used at generation time).
std::vector<TokenId> make_source(const RawExample& ex, const ConditioningConfig& cond,
                                 const Vocabulary& vocab, const TextLimits& limits = {},
                                 bool* rs_fallback = nullptr);
std::vector<TokenId> make_answer(const RawExample& ex, const Vocabulary& vocab,
                                 const TextLimits& limits = {});

}  // namespace aqg
