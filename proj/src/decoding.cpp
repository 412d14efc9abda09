#include "aqg/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "aqg/errors.hpp"

namespace aqg {

double normalized_score(double score, std::size_t length, double alpha) {
  if (length == 0) return score;
  return score / std::pow(static_cast<double>(length), alpha);
}

bool ranks_before(double norm_a, const std::vector<TokenId>& a, double norm_b,
                  const std::vector<TokenId>& b) {
  if (norm_a != norm_b) return norm_a > norm_b;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated, EOS included when finished by it
  double score = 0.0;
};

std::vector<TokenId> with_bos(const std::vector<TokenId>& tokens, TokenId bos) {
  std::vector<TokenId> p{bos};
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

GenerationOutput finish(const Hypothesis& h, const DecodeOptions& opt) {
  GenerationOutput out;
  out.length = h.tokens.size();
  out.score = h.score;
  out.normalized_score = normalized_score(h.score, out.length, opt.alpha);
  out.tokens = h.tokens;
  if (!out.tokens.empty() && out.tokens.back() == opt.eos) out.tokens.pop_back();
  return out;
}

void check_options(const DecodeOptions& opt) {
  if (opt.beam < 1) throw ConfigError("beam must be >= 1");
  if (opt.max_len < 1) throw ConfigError("max_len must be >= 1");
}

}  // namespace

GenerationOutput greedy_decode(StepScorer& scorer, const DecodeOptions& opt) {
  check_options(opt);
  Hypothesis h;
  for (std::size_t step = 0; step < opt.max_len; ++step) {
    const auto lp = scorer.next_log_probs({with_bos(h.tokens, opt.bos)}).at(0);
    // max_element returns the first maximum, i.e. the lowest id on ties.
    const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.score += lp[static_cast<std::size_t>(best)];
    if (best == opt.eos) break;
  }
  return finish(h, opt);
}

GenerationOutput beam_search(StepScorer& scorer, const DecodeOptions& opt) {
  check_options(opt);
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> pool;
  for (std::size_t step = 0; step < opt.max_len && !live.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(with_bos(h.tokens, opt.bos));
    const auto lps = scorer.next_log_probs(prefixes);

    std::vector<Hypothesis> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (std::size_t t = 0; t < lps[i].size(); ++t) {
        Hypothesis c;
        c.tokens = live[i].tokens;
        c.tokens.push_back(static_cast<TokenId>(t));
        c.score = live[i].score + lps[i][t];
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(opt.beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep),
                      candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return a.tokens < b.tokens;
                      });
    candidates.resize(keep);

    live.clear();
    for (auto& c : candidates) {
      if (c.tokens.back() == opt.eos || c.tokens.size() >= opt.max_len) {
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
    if (pool.size() >= opt.beam) break;
  }
  // Unreachable unless max_len stops the loop with live beams left; those
  // count as finished at the cap.
  for (auto& h : live) pool.push_back(std::move(h));

  const Hypothesis* best = nullptr;
  double best_norm = -std::numeric_limits<double>::infinity();
  for (const auto& h : pool) {
    const double n = normalized_score(h.score, h.tokens.size(), opt.alpha);
    if (!best || ranks_before(n, h.tokens, best_norm, best->tokens)) {
      best = &h;
      best_norm = n;
    }
  }
  return finish(*best, opt);
}

// ---- model-backed scoring --------------------------------------------------

ModelScorer::ModelScorer(const Seq2SeqModel<float>& model, const std::vector<TokenId>& source,
                         const std::vector<TokenId>& answer)
    : model_(model) {
  NoGradGuard guard;
  const IdBatch src = IdBatch::pad({source});
  const IdBatch ans = IdBatch::pad({answer});
  enc_ = model_.prepare_source(src, ans, &answer_);
}

std::vector<std::vector<double>> ModelScorer::next_log_probs(
    const std::vector<std::vector<TokenId>>& prefixes) {
  NoGradGuard guard;
  const IdBatch input = IdBatch::pad(prefixes);
  const Tensor<float> logits = model_.decode(input, enc_, &answer_);
  const std::size_t vocab = logits.dim(-1);
  const std::size_t m = input.cols;
  auto data = logits.data();
  std::vector<std::vector<double>> out(prefixes.size(), std::vector<double>(vocab));
  for (std::size_t r = 0; r < prefixes.size(); ++r) {
    const float* row = data.data() + (r * m + prefixes[r].size() - 1) * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < vocab; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double z = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) z += std::exp(static_cast<double>(row[i]) - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t i = 0; i < vocab; ++i) out[r][i] = static_cast<double>(row[i]) - log_z;
  }
  return out;
}

GenerationOutput generate(const Seq2SeqModel<float>& model, const RawExample& example,
                          const Vocabulary& vocab, const TextLimits& limits,
                          const DecodeOptions& options, bool greedy) {
  const auto& cond = model.config().conditioning;
  ModelScorer scorer(model, make_source(example, cond, vocab, limits),
                     make_answer(example, vocab, limits));
  GenerationOutput out = greedy ? greedy_decode(scorer, options) : beam_search(scorer, options);
  out.text = detokenize(out.tokens, vocab);
  return out;
}

std::vector<GenerationOutput> generate_all(const Seq2SeqModel<float>& model,
                                           const std::vector<RawExample>& examples,
                                           const Vocabulary& vocab, const TextLimits& limits,
                                           const DecodeOptions& options, bool greedy,
                                           std::size_t threads) {
  std::vector<GenerationOutput> out(examples.size());
  threads = std::max<std::size_t>(1, std::min(threads, examples.size()));
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < examples.size(); i += threads) {
      out[i] = generate(model, examples[i], vocab, limits, options, greedy);
    }
  };
  if (threads == 1) {
    work(0);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        work(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace aqg
