#pragma once

// Question-quality metrics and the answering-accuracy pipeline.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aqg/text.hpp"

namespace aqg {

// LCS F-measure, recall weighted by beta. 0 when either side is empty.
double rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref,
               double beta = 1.2);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct MeteorBreakdown {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

// Exact-unigram METEOR: each hypothesis token, left to right, takes the first
// unused identical reference token. F = 10PR / (R + 9P), penalty
// 0.5 (chunks / matches)^3.
MeteorBreakdown meteor_detail(std::span<const std::string> hyp,
                              std::span<const std::string> ref);
double meteor(std::span<const std::string> hyp, std::span<const std::string> ref);

// ---- QA oracles ------------------------------------------------------------

class QAOracle {
 public:
  virtual ~QAOracle() = default;
  virtual std::string name() const = 0;
  // Must return a substring of `passage`.
  virtual std::string answer(const std::string& passage, const std::string& question) const = 0;
  // Oracles that need more than the passage (the gold oracle) override this.
  virtual std::string answer_for(const RawExample& ex, const std::string& question) const {
    return answer(ex.passage, question);
  }
};

// Scores every span of up to max_span tokens by how many question content
// words sit in the surrounding window minus how many question words sit in
// the span itself. Ties go to the earliest, then shortest span.
class LexicalOracle : public QAOracle {
 public:
  explicit LexicalOracle(std::size_t max_span = 32, std::size_t window = 10)
      : max_span_(max_span), window_(window) {}
  std::string name() const override { return "lexical"; }
  std::string answer(const std::string& passage, const std::string& question) const override;

 private:
  std::size_t max_span_;
  std::size_t window_;
};

// Returns the dataset answer whatever the question says.
class GoldOracle : public QAOracle {
 public:
  std::string name() const override { return "gold"; }
  std::string answer(const std::string&, const std::string&) const override;
  std::string answer_for(const RawExample& ex, const std::string&) const override {
    return ex.answer;
  }
};

class EmptyOracle : public QAOracle {
 public:
  std::string name() const override { return "empty"; }
  std::string answer(const std::string&, const std::string&) const override { return ""; }
};

std::vector<std::string> oracle_names();
// Throws ConfigError listing the available names.
std::unique_ptr<QAOracle> make_oracle(const std::string& name);

// Lowercased with surrounding whitespace removed.
std::string normalize_answer(std::string_view s);

struct AccuracyResult {
  double percentage = 0.0;
  std::size_t matches = 0;
  std::size_t failures = 0;  // oracle threw or broke the substring contract
};

// questions[i] is the generated question for examples[i].
AccuracyResult answering_accuracy(std::span<const RawExample> examples,
                                  std::span<const std::string> questions,
                                  const QAOracle& oracle);

// ---- predictions and reports -----------------------------------------------

struct Prediction {
  std::string id;
  std::string question;
  double score = 0.0;
  std::string mode;
};

// One JSON object per line: {"id", "question", "score", "mode"}.
void write_predictions(const std::vector<Prediction>& preds, const std::filesystem::path& path);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

struct EvalReport {
  std::string mode;
  double rouge_l = 0.0;
  double meteor = 0.0;
  double answering_accuracy = 0.0;  // percent
  std::size_t n_examples = 0;
  std::size_t oracle_failures = 0;

  void check_ranges() const;
};

// Predictions must cover exactly the dataset ids. Scores are means over the
// dataset in its own order.
EvalReport evaluate(const std::vector<Prediction>& predictions,
                    std::span<const RawExample> dataset, const QAOracle& oracle,
                    const std::string& mode, double beta = 1.2);

std::string report_json(const EvalReport& r);
EvalReport parse_report_json(const std::string& text);
// Model | ROUGE-L | METEOR-x | Answering Accuracy (%)
std::string report_table(const std::vector<EvalReport>& rows);

}  // namespace aqg
