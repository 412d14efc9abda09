#include "aqg/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "aqg/errors.hpp"

namespace aqg {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref, double beta) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const auto l = static_cast<double>(lcs_length(hyp, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(hyp.size());
  const double r = l / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

MeteorBreakdown meteor_detail(std::span<const std::string> hyp,
                              std::span<const std::string> ref) {
  MeteorBreakdown out;
  std::vector<bool> used(ref.size(), false);
  // align[i] = matched reference position of hypothesis token i, or -1.
  std::vector<long> align(hyp.size(), -1);
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == hyp[i]) {
        used[j] = true;
        align[i] = static_cast<long>(j);
        ++out.matches;
        break;
      }
    }
  }
  if (out.matches == 0) return out;
  long prev = -2;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (align[i] < 0) {
      prev = -2;
      continue;
    }
    if (align[i] != prev + 1) ++out.chunks;
    prev = align[i];
  }
  const auto u = static_cast<double>(out.matches);
  out.precision = u / static_cast<double>(hyp.size());
  out.recall = u / static_cast<double>(ref.size());
  out.fmean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
  const double frag = static_cast<double>(out.chunks) / u;
  out.penalty = 0.5 * frag * frag * frag;
  out.score = out.fmean * (1.0 - out.penalty);
  return out;
}

double meteor(std::span<const std::string> hyp, std::span<const std::string> ref) {
  return meteor_detail(hyp, ref).score;
}

// ---- oracles ---------------------------------------------------------------

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",     "an",    "the",   "of",    "in",    "on",    "at",    "to",   "for",  "by",
      "with",  "from",  "and",   "or",    "is",    "are",   "was",   "were", "be",   "been",
      "do",    "does",  "did",   "what",  "which", "who",   "whom",  "whose", "when", "where",
      "why",   "how",   "that",  "this",  "these", "those", "it",    "its",  "as",   "into",
      "has",   "have",  "had",   "his",   "her",   "their", "they",  "he",   "she",  "we",
      "you",   "i",     "many",  "much",  "can",   "could", "would", "will", "there", "than",
      "then",  "not",   "no",    "so",    "if",    "about", "after", "before", "also", "one",
  };
  return words;
}

bool is_punct_token(const std::string& t) {
  return t.size() == 1 && std::ispunct(static_cast<unsigned char>(t[0]));
}

bool is_sentence_end(const std::string& t) { return t == "." || t == "?" || t == "!"; }

// crude: "live", "lived", "lives" all become "live"
std::string stem(const std::string& w) {
  std::string s;
  for (char c : w) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return s.size() > 4 ? s.substr(0, 4) : s;
}

}  // namespace

std::string LexicalOracle::answer(const std::string& passage, const std::string& question) const {
  const auto tokens = tokenize_with_offsets(passage);
  if (tokens.empty()) return "";
  std::set<std::string> qwords, content;
  for (const auto& w : tokenize(question)) {
    if (is_punct_token(w)) continue;
    qwords.insert(stem(w));
    if (!stopwords().count(w)) content.insert(stem(w));
  }
  const std::size_t n = tokens.size();
  std::vector<std::string> stems(n);
  std::vector<std::size_t> sent_begin(n), sent_end(n);
  for (std::size_t t = 0, start = 0; t < n; ++t) {
    stems[t] = stem(tokens[t].text);
    sent_begin[t] = start;
    if (is_sentence_end(tokens[t].text) || t + 1 == n) {
      for (std::size_t u = start; u <= t; ++u) sent_end[u] = t + 1;
      start = t + 1;
    }
  }
  auto edge_ok = [&](const std::string& t) { return !is_punct_token(t) && !stopwords().count(t); };

  bool found = false;
  long best = 0;
  std::size_t best_i = 0, best_j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!edge_ok(tokens[i].text)) continue;
    for (std::size_t j = i + 1; j <= std::min(n, i + max_span_); ++j) {
      if (!edge_ok(tokens[j - 1].text)) continue;
      // window stays inside the sentences the span touches
      const std::size_t lo = std::max(i > window_ ? i - window_ : 0, sent_begin[i]);
      const std::size_t hi = std::min(j + window_, sent_end[j - 1]);
      std::set<std::string> around, inside;
      for (std::size_t t = lo; t < hi; ++t) {
        if (t >= i && t < j) {
          if (qwords.count(stems[t])) inside.insert(stems[t]);
        } else if (content.count(stems[t])) {
          around.insert(stems[t]);
        }
      }
      const long score = static_cast<long>(around.size()) - static_cast<long>(inside.size());
      if (!found || score > best) {
        found = true;
        best = score;
        best_i = i;
        best_j = j;
      }
    }
  }
  if (!found) {
    // nothing but stopwords and punctuation: fall back to the first word
    for (const auto& t : tokens) {
      if (!is_punct_token(t.text)) return passage.substr(t.begin, t.end - t.begin);
    }
    return "";
  }
  const std::size_t b = tokens[best_i].begin;
  return passage.substr(b, tokens[best_j - 1].end - b);
}

std::string GoldOracle::answer(const std::string&, const std::string&) const {
  throw ContractError("gold oracle needs the dataset example");
}

std::vector<std::string> oracle_names() { return {"lexical", "gold", "empty"}; }

std::unique_ptr<QAOracle> make_oracle(const std::string& name) {
  if (name == "lexical") return std::make_unique<LexicalOracle>();
  if (name == "gold") return std::make_unique<GoldOracle>();
  if (name == "empty") return std::make_unique<EmptyOracle>();
  std::string list;
  for (const auto& n : oracle_names()) list += (list.empty() ? "" : ", ") + n;
  throw ConfigError("unknown oracle '" + name + "' (available: " + list + ")");
}

std::string normalize_answer(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

AccuracyResult answering_accuracy(std::span<const RawExample> examples,
                                  std::span<const std::string> questions,
                                  const QAOracle& oracle) {
  if (examples.size() != questions.size()) {
    throw ContractError("answering_accuracy: " + std::to_string(examples.size()) +
                        " examples but " + std::to_string(questions.size()) + " questions");
  }
  AccuracyResult r;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    std::string predicted;
    try {
      predicted = oracle.answer_for(ex, questions[i]);
      if (ex.passage.find(predicted) == std::string::npos) {
        throw ContractError("answer '" + predicted + "' is not a passage substring");
      }
    } catch (const std::exception& e) {
      std::cerr << "warning: oracle '" << oracle.name() << "' failed on " << ex.id << ": "
                << e.what() << "\n";
      ++r.failures;
      continue;
    }
    if (normalize_answer(predicted) == normalize_answer(ex.answer)) ++r.matches;
  }
  r.percentage = examples.empty()
                     ? 0.0
                     : 100.0 * static_cast<double>(r.matches) / static_cast<double>(examples.size());
  return r;
}

// ---- predictions and reports -----------------------------------------------

void write_predictions(const std::vector<Prediction>& preds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write predictions " + path.string());
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["question"] = p.question;
    j["score"] = p.score;
    j["mode"] = p.mode;
    out << j.dump() << "\n";
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read predictions " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Prediction p;
      p.id = j.at("id").get<std::string>();
      p.question = j.at("question").get<std::string>();
      p.score = j.value("score", 0.0);
      p.mode = j.value("mode", std::string{});
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void EvalReport::check_ranges() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(rouge_l) || !unit(meteor) || !(answering_accuracy >= 0.0 && answering_accuracy <= 100.0) ||
      oracle_failures > n_examples) {
    throw ContractError("report for " + mode + " has out-of-range values");
  }
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i == 20) {
      s += ", ... (" + std::to_string(ids.size()) + " total)";
      break;
    }
    s += (i ? ", " : "") + ids[i];
  }
  return s;
}

}  // namespace

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    std::span<const RawExample> dataset, const QAOracle& oracle,
                    const std::string& mode, double beta) {
  if (predictions.empty()) throw DataError("evaluate: no predictions");
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  std::map<std::string, const Prediction*> by_id;
  std::vector<std::string> duplicates;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) duplicates.push_back(p.id);
  }
  if (!duplicates.empty()) throw DataError("duplicate prediction ids: " + join_ids(duplicates));

  std::vector<std::string> missing;
  std::unordered_set<std::string> known;
  for (const auto& ex : dataset) {
    known.insert(ex.id);
    if (!by_id.count(ex.id)) missing.push_back(ex.id);
  }
  if (!missing.empty()) throw DataError("missing predictions for ids: " + join_ids(missing));
  std::vector<std::string> unknown;
  for (const auto& [id, p] : by_id) {
    if (!known.count(id)) unknown.push_back(id);
  }
  if (!unknown.empty()) throw DataError("predictions for ids not in the dataset: " + join_ids(unknown));

  EvalReport r;
  r.mode = mode;
  r.n_examples = dataset.size();
  std::vector<std::string> questions;
  double rouge_sum = 0.0, meteor_sum = 0.0;
  for (const auto& ex : dataset) {
    const std::string& q = by_id.at(ex.id)->question;
    questions.push_back(q);
    const auto hyp = tokenize(q);
    const auto ref = tokenize(ex.question);
    rouge_sum += rouge_l(hyp, ref, beta);
    meteor_sum += meteor(hyp, ref);
  }
  const auto n = static_cast<double>(dataset.size());
  r.rouge_l = rouge_sum / n;
  r.meteor = meteor_sum / n;
  const auto acc = answering_accuracy(dataset, questions, oracle);
  r.answering_accuracy = acc.percentage;
  r.oracle_failures = acc.failures;
  r.check_ranges();
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["rouge_l"] = r.rouge_l;
  j["meteor"] = r.meteor;
  j["answering_accuracy"] = r.answering_accuracy;
  j["n_examples"] = r.n_examples;
  j["oracle_failures"] = r.oracle_failures;
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.mode = j.at("mode").get<std::string>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.meteor = j.at("meteor").get<double>();
    r.answering_accuracy = j.at("answering_accuracy").get<double>();
    r.n_examples = j.at("n_examples").get<std::size_t>();
    r.oracle_failures = j.at("oracle_failures").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string report_table(const std::vector<EvalReport>& rows) {
  const std::string h0 = "Model", h1 = "ROUGE-L", h2 = "METEOR-x", h3 = "Answering Accuracy (%)";
  std::size_t w0 = h0.size();
  for (const auto& r : rows) w0 = std::max(w0, r.mode.size());
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, s.size()), ' '); };
  std::ostringstream out;
  out << pad(h0, w0) << " | " << h1 << " | " << h2 << " | " << h3 << "\n";
  out << std::string(w0, '-') << "-|-" << std::string(h1.size(), '-') << "-|-"
      << std::string(h2.size(), '-') << "-|-" << std::string(h3.size(), '-') << "\n";
  char b1[32], b2[32], b3[32];
  for (const auto& r : rows) {
    std::snprintf(b1, sizeof b1, "%.4f", r.rouge_l);
    std::snprintf(b2, sizeof b2, "%.4f", r.meteor);
    std::snprintf(b3, sizeof b3, "%.2f", r.answering_accuracy);
    out << pad(r.mode, w0) << " | " << pad(b1, h1.size()) << " | " << pad(b2, h2.size())
        << " | " << b3 << "\n";
  }
  return out.str();
}

}  // namespace aqg
