// Acceptance run: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by name.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "toy_scorer.hpp"

#include "aqg/cli.hpp"
#include "aqg/eval.hpp"
#include "aqg/grad_suite.hpp"
#include "aqg/model.hpp"
#include "aqg/synthetic.hpp"
#include "aqg/training.hpp"

using namespace aqg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path work_root() {
  auto p = fs::temp_directory_path() / "aqg_acceptance";
  fs::create_directories(p);
  return p;
}

int cli(const std::vector<std::string>& args, const std::string& what) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  if (code != 0) std::cerr << what << " failed (" << code << "): " << err.str();
  return code;
}

// make-synthetic + prepare-data: 40 examples, 32 train / 8 dev.
fs::path synthetic_data(const fs::path& dir) {
  fs::remove_all(dir);
  const auto raw = dir / "raw", data = dir / "data";
  if (cli({"make-synthetic", "--out", raw.string(), "--count", "40", "--train", "32", "--seed", "1"},
          "make-synthetic") != 0)
    return {};
  if (cli({"prepare-data", "--squad", (raw / "squad.json").string(), "--split",
           "train=" + (raw / "train.ids").string(), "--split", "dev=" + (raw / "dev.ids").string(), "--out",
           data.string()},
          "prepare-data") != 0)
    return {};
  return data;
}

// ---- gradient suite ----------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto reports = run_grad_suite();
  const double secs = seconds_since(t0);
  std::size_t passed = 0;
  std::set<std::string> names;
  for (const auto& r : reports) {
    passed += r.passed;
    names.insert(r.op);
    if (!r.passed) std::cerr << "  grad check failed: " << r.op << " max_rel_error=" << r.max_rel_error << "\n";
  }
  bool covered = true;
  for (const char* n : {"matmul", "softmax", "layer_norm", "encoder_layer", "decoder_layer", "answer_attention_block",
                        "cp_transform", "full_model"})
    covered = covered && names.count(n);
  return {passed == reports.size() && covered && secs < 120.0,
          std::to_string(passed) + "/" + std::to_string(reports.size()) + " checks passed in " +
              fmt("%.1f", secs) + " s" + (covered ? "" : ", required check missing")};
}

// ---- attention ---------------------------------------------------------------

Outcome attention_invariants() {
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  double worst_sum = 0, worst_masked = 0;
  std::size_t masked_entries = 0;
  for (int call = 0; call < 1000; ++call) {
    const std::size_t b = pick(1, 3), h = pick(1, 4), m = pick(1, 12), dk = pick(1, 16), dv = pick(1, 8);
    const int kind = int(rng() % 4);  // none, padding, causal, both
    const std::size_t s = (kind >= 2) ? m : pick(1, 40);
    const double spread = 0.1 + double(rng() % 100) / 10.0;
    auto gen = [&](Shape shape) {
      FloatTensor t = FloatTensor::zeros(shape);
      std::normal_distribution<float> n(0.0f, float(spread));
      for (auto& v : t.mutable_data()) v = n(rng);
      return t;
    };
    FloatTensor q = gen({b, h, m, dk}), k = gen({b, h, s, dk}), v = gen({b, h, s, dv});
    std::vector<std::uint8_t> valid(b * s, 1);
    if (kind == 1 || kind == 3)
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 1; j < s; ++j) valid[r * s + j] = rng() % 3 != 0;
    FloatTensor mask;
    if (kind == 1) mask = key_padding_mask<float>(valid, b, s);
    if (kind == 2) mask = causal_mask<float>(m);
    if (kind == 3) mask = add(key_padding_mask<float>(valid, b, s), causal_mask<float>(m));
    const auto res = attention(q, k, v, mask.defined() ? &mask : nullptr);
    const auto w = res.weights.data();
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t hh = 0; hh < h; ++hh)
        for (std::size_t i = 0; i < m; ++i) {
          double total = 0;
          for (std::size_t j = 0; j < s; ++j) {
            const double x = w[((r * h + hh) * m + i) * s + j];
            if (x < 0.0 || x > 1.0) return {false, "weight outside [0,1]"};
            total += x;
            const bool masked = ((kind == 1 || kind == 3) && !valid[r * s + j]) || ((kind >= 2) && j > i);
            if (masked) {
              ++masked_entries;
              worst_masked = std::max(worst_masked, x);
            }
          }
          worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        }
  }
  return {worst_sum <= 1e-6 && worst_masked < 1e-9,
          "1000 calls, max |row sum - 1| = " + fmt("%.2e", worst_sum) + ", max masked weight = " +
              fmt("%.2e", worst_masked) + " over " + std::to_string(masked_entries) + " masked entries"};
}

// ---- causality ---------------------------------------------------------------

ModelConfig toy_config(const ConditioningConfig& cond, std::size_t vocab, std::size_t d, std::size_t layers) {
  ModelConfig c;
  c.d = d;
  c.layers = layers;
  c.heads = 2;
  c.d_ff = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = 64;
  c.dropout = 0.0;
  c.conditioning = cond;
  return c;
}

Outcome causality() {
  double worst = 0;
  std::size_t comparisons = 0;
  std::mt19937 rng(7);
  const std::size_t V = 30, m = 6;
  for (const auto& cond : experiment_matrix()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Seq2SeqModel<float> model(toy_config(cond, V, 16, 1 + seed % 3), 100 + seed);
      auto rand_row = [&](std::size_t len) {
        std::vector<TokenId> r(len);
        for (auto& t : r) t = TokenId(kNumSpecialTokens + rng() % (V - kNumSpecialTokens));
        return r;
      };
      const IdBatch src = IdBatch::pad({rand_row(9), rand_row(5)});
      const IdBatch ans = IdBatch::pad({rand_row(2), rand_row(1)});
      AnswerEmbedding<float> ea;
      const auto enc = model.prepare_source(src, ans, &ea);
      auto y = rand_row(2 * m);
      for (std::size_t r = 0; r < 2; ++r) y[r * m] = kBosId;
      IdBatch dec = IdBatch::pad({std::vector<TokenId>(y.begin(), y.begin() + m), std::vector<TokenId>(y.begin() + m, y.end())});
      const auto base = model.decode(dec, enc, &ea);
      for (std::size_t t = 0; t + 1 < m; ++t) {
        IdBatch pert = dec;
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t p = t + 1; p < m; ++p) pert.ids[r * m + p] = TokenId(kNumSpecialTokens + rng() % (V - kNumSpecialTokens));
        const auto out = model.decode(pert, enc, &ea);
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t p = 0; p <= t; ++p)
            for (std::size_t v = 0; v < V; ++v) {
              const std::size_t i = (r * m + p) * V + v;
              worst = std::max(worst, double(std::abs(base.data()[i] - out.data()[i])));
              ++comparisons;
            }
      }
    }
  }
  return {worst < 1e-5, "7 configurations x 3 models (L=1..3), " + std::to_string(comparisons) +
                            " logits compared, max |diff| = " + fmt("%.2e", worst)};
}

// ---- mechanism invariants -----------------------------------------------------

Outcome mechanism_invariants() {
  std::mt19937_64 rng(99);
  std::vector<std::string> failures;

  // AP
  for (int t = 0; t < 2000; ++t) {
    std::vector<TokenId> a(rng() % 41), x(rng() % 701);
    for (auto& v : a) v = TokenId(5 + rng() % 100);
    for (auto& v : x) v = TokenId(5 + rng() % 100);
    const auto out = build_ap_input(a, x);
    const std::size_t pre = std::min<std::size_t>(a.size(), 32);
    if (out.size() > 512 || !std::equal(a.begin(), a.begin() + pre, out.begin())) {
      failures.push_back("AP");
      break;
    }
  }

  // RS
  const std::vector<std::string> words{"river", "stone", "Paris", "red", "old", "1990"};
  std::size_t fallbacks = 0;
  for (int t = 0; t < 2000; ++t) {
    std::string p;
    const int ns = 1 + int(rng() % 6);
    for (int s = 0; s < ns; ++s) {
      if (s) p += ' ';
      const int nw = 1 + int(rng() % 6);
      for (int w = 0; w < nw; ++w) p += (w ? " " : "") + words[rng() % words.size()];
      p += ".?!"[rng() % 3];
    }
    std::size_t b = rng() % p.size();
    std::size_t e = (t % 10 == 0) ? b : b + 1 + rng() % (p.size() - b);
    const std::string answer = p.substr(b, e - b);
    const auto sel = select_answer_sentences(p, answer, b, e);
    fallbacks += sel.fallback;
    if (!sel.fallback && sel.text.find(answer) == std::string::npos) {
      failures.push_back("RS");
      break;
    }
    if (answer.empty() && !sel.fallback) {
      failures.push_back("RS fallback flag");
      break;
    }
  }

  // CP with E_a orthogonal to every row of E_o
  double cp_worst = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t B = 1 + rng() % 3, n = 1 + rng() % 20, d = 2 + rng() % 15;
    const double k = 1.0 + double(rng() % 2000) / 10.0;
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> ea(B * d), eo(B * n * d);
    for (std::size_t b = 0; b < B; ++b) {
      double norm = 0;
      for (std::size_t c = 0; c < d; ++c) norm += std::pow(ea[b * d + c] = g(rng), 2);
      for (std::size_t i = 0; i < n; ++i) {
        double* row = &eo[(b * n + i) * d];
        double dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += (row[c] = g(rng)) * ea[b * d + c];
        for (std::size_t c = 0; c < d; ++c) row[c] -= dot / norm * ea[b * d + c];
      }
    }
    const DoubleTensor states({B, n, d}, eo), answer({B, d}, ea);
    const auto out = cp_transform(states, answer, k);
    for (std::size_t i = 0; i < eo.size(); ++i) cp_worst = std::max(cp_worst, std::abs(out.data()[i] - k / double(n) * eo[i]));
  }
  if (cp_worst > 1e-6) failures.push_back("CP");

  // AA pre-residual context
  double aa_worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ConditioningConfig cond = parse_mode(seed % 2 ? "aa" : "ap,rs,cp,aa");
    Seq2SeqModel<float> model(toy_config(cond, 40, 8 * (1 + seed % 3), 1 + seed % 2), seed);
    std::vector<TokenId> src(3 + seed % 9), y(2 + seed % 7);
    for (auto& v : src) v = TokenId(5 + rng() % 35);
    for (auto& v : y) v = TokenId(5 + rng() % 35);
    y[0] = kBosId;
    AnswerEmbedding<float> ea;
    const auto enc = model.prepare_source(IdBatch::pad({src}), IdBatch::pad({{src[1], src[2]}}), &ea);
    ForwardContext<float> ctx;
    ctx.on_answer_context = [&](const FloatTensor& c) {
      const std::size_t m = c.dim(1), d = c.dim(2);
      for (std::size_t b = 0; b < c.dim(0); ++b)
        for (std::size_t i = 1; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j)
            aa_worst = std::max(aa_worst, double(std::abs(c.data()[(b * m + i) * d + j] - c.data()[b * m * d + j])));
    };
    model.decode(IdBatch::pad({y}), enc, &ea, ctx);
  }
  if (aa_worst > 1e-6) failures.push_back("AA");

  std::string detail = "AP 2000 cases; RS 2000 cases (" + std::to_string(fallbacks) +
                       " fallbacks flagged); CP max |out - k/n E_o| = " + fmt("%.2e", cp_worst) +
                       "; AA max context spread = " + fmt("%.2e", aa_worst);
  for (const auto& f : failures) detail += "; violated: " + f;
  return {failures.empty(), detail};
}

// ---- decoding ----------------------------------------------------------------

Outcome decoding() {
  const auto t0 = Clock::now();
  std::size_t beam1_agree = 0;
  std::mt19937 rng(5);
  const auto modes = experiment_matrix();
  for (std::uint64_t i = 0; i < 100; ++i) {
    const std::size_t V = 8 + i % 10;
    Seq2SeqModel<float> model(toy_config(modes[i % modes.size()], V, 8, 1 + i % 2), 500 + i);
    std::vector<TokenId> src(2 + rng() % 10), ans(1 + rng() % 3);
    for (auto& v : src) v = TokenId(5 + rng() % (V - 5));
    for (auto& v : ans) v = TokenId(5 + rng() % (V - 5));
    ModelScorer scorer(model, src, ans);
    DecodeOptions o;
    o.beam = 1;
    o.max_len = 12;
    beam1_agree += beam_search(scorer, o).tokens == greedy_decode(scorer, o).tokens;
  }

  std::size_t brute_total = 0, brute_agree = 0;
  for (std::size_t V = 2; V <= 5; ++V)
    for (std::size_t L = 1; L <= 4; ++L)
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        testing::RandomTreeScorer s(V, seed * 1009 + V * 31 + L, seed % 2 ? 0.5 : 2.0);
        std::size_t width = 1;
        for (std::size_t j = 0; j < L; ++j) width *= V;
        const auto o = s.options(width, L);
        const auto got = beam_search(s, o);
        const auto best = testing::exhaustive_best(s, o);
        ++brute_total;
        brute_agree += got.tokens == testing::strip_eos(best.tokens, o.eos) && got.length == best.tokens.size();
      }
  const double secs = seconds_since(t0);
  return {beam1_agree == 100 && brute_agree == brute_total && secs < 60.0,
          "beam=1 == greedy on " + std::to_string(beam1_agree) + "/100 toy models; full-width beam == exhaustive on " +
              std::to_string(brute_agree) + "/" + std::to_string(brute_total) + " scorers; " + fmt("%.1f", secs) + " s"};
}

// ---- metric oracles ------------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  // Every sequence of length <= 8 over {a,b,c}, ordered by length.
  std::vector<std::vector<std::string>> seqs{{}};
  std::vector<std::vector<int>> codes{{}};
  for (std::size_t len = 1; len <= 8; ++len) {
    const std::size_t start = codes.size();
    for (std::size_t i = 0; i < start; ++i) {
      if (codes[i].size() != len - 1) continue;
      for (int c = 0; c < 3; ++c) {
        auto next = codes[i];
        next.push_back(c);
        codes.push_back(next);
      }
    }
  }
  std::sort(codes.begin(), codes.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  const std::size_t N = codes.size();
  auto index_of = [&](const std::vector<int>& c) {
    return std::size_t(std::lower_bound(codes.begin(), codes.end(), c, [](const auto& a, const auto& b) {
                         return a.size() != b.size() ? a.size() < b.size() : a < b;
                       }) -
                       codes.begin());
  };
  seqs.assign(N, {});
  const char* sym[] = {"a", "b", "c"};
  for (std::size_t i = 0; i < N; ++i)
    for (int c : codes[i]) seqs[i].push_back(sym[c]);

  // subs[i]: bitset of every sequence that is a subsequence of sequence i,
  // found by enumerating all 2^len index subsets.
  const std::size_t words = (N + 63) / 64;
  std::vector<std::uint64_t> subs(N * words, 0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& c = codes[i];
    for (std::uint32_t mask = 0; mask < (1u << c.size()); ++mask) {
      std::vector<int> sub;
      for (std::size_t j = 0; j < c.size(); ++j)
        if (mask >> j & 1) sub.push_back(c[j]);
      const std::size_t k = index_of(sub);
      subs[i * words + k / 64] |= std::uint64_t(1) << (k % 64);
    }
  }
  std::vector<std::size_t> len_of(N);
  for (std::size_t i = 0; i < N; ++i) len_of[i] = codes[i].size();

  std::size_t pairs = 0, rouge_bad = 0;
  double worst = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const std::uint64_t* si = &subs[i * words];
    for (std::size_t j = 0; j < N; ++j) {
      const std::uint64_t* sj = &subs[j * words];
      std::size_t lcs = 0;
      for (std::size_t w = words; w-- > 0;) {
        const std::uint64_t both = si[w] & sj[w];
        if (both) {
          lcs = len_of[w * 64 + 63 - std::size_t(__builtin_clzll(both))];
          break;
        }
      }
      double expect = 0.0;
      if (lcs && len_of[i] && len_of[j]) {
        const double p = double(lcs) / len_of[i], r = double(lcs) / len_of[j], b2 = 1.44;
        expect = (1 + b2) * p * r / (r + b2 * p);
      }
      const double got = rouge_l(seqs[i], seqs[j], 1.2);
      const double diff = std::abs(got - expect);
      worst = std::max(worst, diff);
      rouge_bad += diff > 1e-12;
      ++pairs;
    }
  }

  struct MeteorCase {
    const char* hyp;
    const char* ref;
    double expect;
  };
  const MeteorCase cases[] = {
      {"the cat sat", "the cat was sat", 7.5 / 9.75 * (1 - 0.5 * 8.0 / 27)},
      {"a b c d", "a b c d", 1 - 0.5 / 64},
      {"a b", "c d", 0.0},
      {"c b a", "a b c", 0.5},
      {"what is the name", "what is name", 7.5 / 7.75 * (1 - 0.5 * 8.0 / 27)},
      {"the the cat", "the cat the", 0.5},
      {"x", "x y z w", 2.5 / 9.25 * 0.5},
      {"who wrote the book", "the book was written by whom", 10.0 / 29 * 15.0 / 16},
      {"a b c d e f", "d e f a b c", 53.0 / 54},
      {"when did it end ?", "when did the war end ?", 40.0 / 59 * 15.0 / 16},
  };
  std::size_t meteor_ok = 0;
  for (const auto& c : cases) {
    const double got = meteor(tokenize(c.hyp), tokenize(c.ref));
    if (std::abs(got - c.expect) < 1e-12)
      ++meteor_ok;
    else
      std::cerr << "  meteor(" << c.hyp << " | " << c.ref << ") = " << got << ", expected " << c.expect << "\n";
  }

  const auto corpus = synthetic_corpus(32, 4);
  std::vector<std::string> junk(corpus.size(), "what is it ?");
  const double gold = answering_accuracy(corpus, junk, GoldOracle{}).percentage;
  const double empty = answering_accuracy(corpus, junk, EmptyOracle{}).percentage;

  const bool ok = rouge_bad == 0 && meteor_ok == 10 && gold == 100.0 && empty == 0.0;
  return {ok, "rouge_l vs exhaustive LCS on " + std::to_string(pairs) + " pairs (max diff " + fmt("%.1e", worst) +
                  "); meteor " + std::to_string(meteor_ok) + "/10 hand cases; accuracy gold=" + fmt("%.1f", gold) +
                  " empty=" + fmt("%.1f", empty) + "; " + fmt("%.1f", seconds_since(t0)) + " s"};
}

// ---- matrix run shared by the overfit and matrix criteria ------------------------

struct MatrixRun {
  bool ok = false;
  fs::path data, out;
  double seconds = 0;
};

const MatrixRun& matrix_run() {
  static MatrixRun run = [] {
    MatrixRun r;
    const auto dir = work_root() / "matrix";
    r.data = synthetic_data(dir);
    r.out = dir / "runs";
    if (r.data.empty()) return r;
    const auto t0 = Clock::now();
    std::cout << "  (training 7 configurations x 2000 steps)" << std::endl;
    r.ok = cli({"matrix", "--data", r.data.string(), "--out", r.out.string(), "--profile", "desk", "--set",
                "dropout=0", "--oracle", "lexical"},
               "matrix") == 0;
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Outcome overfit() {
  const auto& run = matrix_run();
  if (!run.ok) return {false, "matrix run failed"};
  const auto train = load_prepared_split(run.data / "train.jsonl");
  const auto vocab = Vocabulary::load(run.data / "vocab.tsv");
  bool all = true;
  std::string detail;
  for (const auto& cond : experiment_matrix()) {
    const auto label = mode_label(cond);
    const auto ckpt = load_checkpoint(run.out / label / "model.ckpt");
    const auto model = model_from_checkpoint(ckpt);
    const bool desk = ckpt.model.d == 128 && ckpt.model.layers == 2 && ckpt.model.heads == 4 && ckpt.step == 2000;
    const double loss = evaluate_loss(model, train, vocab, {}, 8);
    DecodeOptions o;
    const auto outs = generate_all(model, train, vocab, {}, o, true, worker_threads());
    std::size_t exact = 0;
    for (std::size_t i = 0; i < train.size(); ++i) exact += outs[i].tokens == encode(train[i].question, vocab, 128);
    const double frac = double(exact) / double(train.size());
    const bool ok = desk && loss < 0.1 && frac >= 0.9;
    all = all && ok;
    detail += (detail.empty() ? "" : "; ") + label + " loss=" + fmt("%.4f", loss) + " exact=" + std::to_string(exact) +
              "/" + std::to_string(train.size()) + (ok ? "" : " (miss)");
  }
  return {all, detail + "; " + fmt("%.0f", run.seconds) + " s for the 7 runs"};
}

Outcome end_to_end_matrix() {
  const auto& run = matrix_run();
  if (!run.ok) return {false, "matrix run failed"};
  std::istringstream table(slurp(run.out / "table.txt"));
  std::string header, line;
  std::getline(table, header);
  std::vector<std::string> rows;
  while (std::getline(table, line))
    if (!line.empty() && line.find("---") == std::string::npos) rows.push_back(line);
  bool ok = header.find("Model") == 0 && header.find("ROUGE-L") != std::string::npos &&
            header.find("Answering Accuracy (%)") != std::string::npos && rows.size() == 7;
  std::string detail;
  const auto expected = experiment_matrix();
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto label = mode_label(expected[i]);
    EvalReport r;
    try {
      r = parse_report_json(slurp(run.out / label / "report.json"));
      r.check_ranges();
    } catch (const std::exception& e) {
      ok = false;
      detail += label + ": " + e.what() + "; ";
      continue;
    }
    ok = ok && r.mode == label && i < rows.size() && rows[i].rfind(label + " ", 0) == 0;
    detail += label + " R=" + fmt("%.3f", r.rouge_l) + " M=" + fmt("%.3f", r.meteor) + " A=" +
              fmt("%.1f", r.answering_accuracy) + "; ";
  }
  return {ok, std::to_string(rows.size()) + " rows; " + detail.substr(0, detail.size() - 2)};
}

// ---- determinism -----------------------------------------------------------------

Outcome determinism() {
  const auto t0 = Clock::now();
  std::vector<std::string> artefacts[2];
  const char* files[] = {"data/vocab.tsv", "data/train.jsonl", "run/model.ckpt", "run/loss.csv",
                         "predictions.jsonl", "report/report.json", "report/report.txt"};
  for (int k = 0; k < 2; ++k) {
    const auto dir = work_root() / ("determinism_" + std::to_string(k));
    const auto data = synthetic_data(dir);
    if (data.empty()) return {false, "data preparation failed"};
    if (cli({"train", "--data", data.string(), "--out", (dir / "run").string(), "--mode", "ap,rs,cp,aa", "--steps",
             "200", "--seed", "77"},
            "train") != 0 ||
        cli({"generate", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--data", data.string(), "--out",
             (dir / "predictions.jsonl").string()},
            "generate") != 0 ||
        cli({"evaluate", "--predictions", (dir / "predictions.jsonl").string(), "--data", data.string(), "--out",
             (dir / "report").string()},
            "evaluate") != 0)
      return {false, "pipeline run " + std::to_string(k + 1) + " failed"};
    for (const char* f : files) artefacts[k].push_back(slurp(dir / f));
  }
  std::string differing;
  for (std::size_t i = 0; i < std::size(files); ++i)
    if (artefacts[0][i] != artefacts[1][i] || artefacts[0][i].empty()) differing += std::string(" ") + files[i];
  return {differing.empty(), differing.empty() ? "2 runs (AP+RS+CP+AA, 200 steps), " + std::to_string(std::size(files)) +
                                                    " artefacts byte-identical, " + fmt("%.0f", seconds_since(t0)) + " s"
                                              : "differs:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-suite", gradient_suite},     {"attention-invariants", attention_invariants},
      {"causality", causality},               {"mechanism-invariants", mechanism_invariants},
      {"decoding", decoding},                 {"metric-oracles", metric_oracles},
      {"overfit", overfit},                   {"determinism", determinism},
      {"end-to-end-matrix", end_to_end_matrix},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  std::size_t run = 0, passed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++run;
    passed += o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << passed << "/" << run << " criteria passed" << std::endl;
  return passed == run ? 0 : 1;
}
