#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "aqg/model.hpp"
#include "aqg/text.hpp"

namespace aqg {

struct DecodeOptions {
  std::size_t beam = 4;
  std::size_t max_len = 128;  // generated tokens, EOS included
  double alpha = 1.0;         // length normalization exponent
  TokenId bos = kBosId;
  TokenId eos = kEosId;
};

// Source of next-token log-probabilities. Every prefix starts with BOS and all
// prefixes in one call have the same length.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::vector<std::vector<double>> next_log_probs(
      const std::vector<std::vector<TokenId>>& prefixes) = 0;
};

struct GenerationOutput {
  std::vector<TokenId> tokens;  // generated ids, BOS and EOS stripped
  std::string text;
  double score = 0.0;             // summed log-probability, EOS step included
  double normalized_score = 0.0;  // score / length^alpha
  std::size_t length = 0;         // generated steps, EOS included
};

// Argmax per step; ties go to the lowest token id.
GenerationOutput greedy_decode(StepScorer& scorer, const DecodeOptions& options);

// Beam search over summed log-probabilities. Hypotheses that emit EOS or hit
// max_len retire to a pool; the search ends when every beam has retired or
// the pool holds `beam` hypotheses. The result is the pool entry with the
// best normalized score, ties to shorter length then smaller token ids.
GenerationOutput beam_search(StepScorer& scorer, const DecodeOptions& options);

// Length-normalized ranking used by beam_search, exposed for oracles.
double normalized_score(double score, std::size_t length, double alpha);
// True when (score_a, a) ranks strictly before (score_b, b).
bool ranks_before(double norm_a, const std::vector<TokenId>& a, double norm_b,
                  const std::vector<TokenId>& b);

// Scores prefixes with a trained model for one example. The encoder (and
// answer conditioning) runs once at construction.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const Seq2SeqModel<float>& model, const std::vector<TokenId>& source,
              const std::vector<TokenId>& answer);
  std::vector<std::vector<double>> next_log_probs(
      const std::vector<std::vector<TokenId>>& prefixes) override;

 private:
  const Seq2SeqModel<float>& model_;
  EncoderOutput<float> enc_;
  AnswerEmbedding<float> answer_;
};

// End-to-end generation for one raw example under the model's conditioning.
GenerationOutput generate(const Seq2SeqModel<float>& model, const RawExample& example,
                          const Vocabulary& vocab, const TextLimits& limits,
                          const DecodeOptions& options, bool greedy = false);

// Generates for many examples using up to `threads` workers. Output order
// matches input order and does not depend on the thread count.
std::vector<GenerationOutput> generate_all(const Seq2SeqModel<float>& model,
                                           const std::vector<RawExample>& examples,
                                           const Vocabulary& vocab, const TextLimits& limits,
                                           const DecodeOptions& options, bool greedy,
                                           std::size_t threads);

}  // namespace aqg
