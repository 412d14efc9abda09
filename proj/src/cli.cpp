#include "aqg/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "CLI11.hpp"
#include "json.hpp"

#include "aqg/errors.hpp"
#include "aqg/grad_suite.hpp"
#include "aqg/synthetic.hpp"

namespace aqg {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  return kExitData;
}

// ---- run configuration -----------------------------------------------------

namespace {

struct Pinned {
  std::size_t d = 768;
  std::size_t layers = 6;
  double lr = 1e-5;
  std::size_t batch_size = 8;
  std::size_t steps = 100000;
  std::size_t beam = 4;
};

std::size_t to_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (!value.empty() && value[0] != '-') {
      const auto v = std::stoull(value, &used);
      if (used == value.size()) return static_cast<std::size_t>(v);
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected a non-negative integer)");
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected a number)");
}

}  // namespace

RunConfig RunConfig::for_profile(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "desk") {
    c.model.d = 128;
    c.model.layers = 2;
    c.model.heads = 4;
    c.model.d_ff = 512;
    c.train.steps = 2000;
    c.train.lr = 3e-4;
    c.train.batch_size = 8;
    c.decode.beam = 4;
  } else if (profile == "paper") {
    const Pinned p;
    c.model.d = p.d;
    c.model.layers = p.layers;
    c.model.heads = 12;
    c.model.d_ff = 3072;
    c.train.steps = p.steps;
    c.train.lr = p.lr;
    c.train.batch_size = p.batch_size;
    c.decode.beam = p.beam;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (available: desk, paper)");
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "profile") {
    if (value != profile) throw ConfigError("profile already resolved as '" + profile + "'");
    return;
  }
  if (key == "beam") decode.beam = to_size(key, value);
  else if (key == "max_len") decode.max_len = to_size(key, value);
  else if (key == "alpha") decode.alpha = to_double(key, value);
  else if (key == "passage_len") limits.passage = to_size(key, value);
  else if (key == "question_len") limits.question = to_size(key, value);
  else if (key == "answer_len") limits.answer = to_size(key, value);
  else if (key == "vocab_max") vocab_max = to_size(key, value);
  else if (apply_key_value(model, key, value)) {
    if (key == "vocab_size") vocab_size_set = true;
  } else if (!apply_key_value(train, key, value)) {
    throw ConfigError("unknown config key '" + key + "'");
  }

  if (profile == "paper") {
    const Pinned p;
    auto pin = [&](const char* name, auto actual, auto fixed) {
      if (actual != fixed) {
        std::ostringstream msg;
        msg << "profile 'paper' fixes " << name << "=" << fixed << "; '" << key << "=" << value
            << "' conflicts";
        throw ConfigError(msg.str());
      }
    };
    pin("d", model.d, p.d);
    pin("layers", model.layers, p.layers);
    pin("lr", train.lr, p.lr);
    pin("batch_size", train.batch_size, p.batch_size);
    pin("steps", train.steps, p.steps);
    pin("beam", decode.beam, p.beam);
  }
}

std::map<std::string, std::string> RunConfig::to_key_values() const {
  std::map<std::string, std::string> kv = aqg::to_key_values(model);
  for (const auto& [k, v] : aqg::to_key_values(train)) kv[k] = v;
  if (!vocab_size_set) kv.erase("vocab_size");
  kv["profile"] = profile;
  kv["beam"] = std::to_string(decode.beam);
  kv["max_len"] = std::to_string(decode.max_len);
  kv["alpha"] = format_double(decode.alpha);
  kv["passage_len"] = std::to_string(limits.passage);
  kv["question_len"] = std::to_string(limits.question);
  kv["answer_len"] = std::to_string(limits.answer);
  kv["vocab_max"] = std::to_string(vocab_max);
  return kv;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : to_key_values()) out += k + "=" + v + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

RunConfig resolve_run_config(const std::vector<std::pair<std::string, std::string>>& settings) {
  std::string profile = "desk";
  for (const auto& [k, v] : settings) {
    if (k == "profile") profile = v;
  }
  RunConfig c = RunConfig::for_profile(profile);
  for (const auto& [k, v] : settings) {
    if (k != "profile") c.set(k, v);
  }
  c.model.conditioning.validate();
  c.train.validate();
  return c;
}

// ---- prepared data ---------------------------------------------------------

PrepareSummary prepare_data(const fs::path& squad, const std::vector<SplitSpec>& splits,
                            const fs::path& out, std::size_t vocab_max, const TextLimits& limits,
                            std::ostream& log) {
  if (splits.empty()) throw ConfigError("prepare-data: at least one split is required");
  std::vector<std::vector<std::string>> ids;
  std::unordered_set<std::string> wanted;
  for (const auto& s : splits) {
    ids.push_back(read_id_list(s.ids));
    wanted.insert(ids.back().begin(), ids.back().end());
  }
  const SquadLoadResult loaded = load_squad(squad, &wanted);

  std::vector<std::vector<RawExample>> parts(splits.size());
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const std::unordered_set<std::string> keep(ids[i].begin(), ids[i].end());
    for (const auto& ex : loaded.examples) {
      if (keep.count(ex.id)) parts[i].push_back(ex);
    }
    if (parts[i].size() < keep.size()) {
      log << "warning: split '" << splits[i].name << "': " << keep.size() - parts[i].size()
          << " listed ids not found or skipped\n";
    }
  }
  if (parts[0].empty()) throw DataError("prepare-data: split '" + splits[0].name + "' is empty");

  fs::create_directories(out);
  const Vocabulary vocab = Vocabulary::build(parts[0], vocab_max);
  vocab.save(out / "vocab.tsv");

  PrepareSummary summary;
  summary.vocab_size = vocab.size();
  summary.skipped = loaded.skipped;
  log << "vocabulary: " << vocab.size() << " tokens\n";
  for (std::size_t i = 0; i < splits.size(); ++i) {
    const fs::path path = out / (splits[i].name + ".jsonl");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    std::size_t passage_tokens = 0, question_tokens = 0, unk = 0, total = 0;
    for (const auto& ex : parts[i]) {
      const TokenizedExample t = tokenize_example(ex, vocab, limits);
      nlohmann::ordered_json j;
      j["id"] = ex.id;
      j["passage"] = ex.passage;
      j["question"] = ex.question;
      j["answer"] = ex.answer;
      j["answer_start"] = ex.answer_start;
      j["passage_ids"] = t.passage;
      j["question_ids"] = t.question;
      j["answer_ids"] = t.answer;
      f << j.dump() << "\n";
      passage_tokens += t.passage.size();
      question_tokens += t.question.size();
      for (auto id : t.passage) unk += id == kUnkId;
      total += t.passage.size();
    }
    const double n = std::max<double>(1.0, static_cast<double>(parts[i].size()));
    char line[256];
    std::snprintf(line, sizeof line,
                  "split %s: %zu examples, mean passage %.1f tokens, mean question %.1f tokens, "
                  "passage unk rate %.4f\n",
                  splits[i].name.c_str(), parts[i].size(), static_cast<double>(passage_tokens) / n,
                  static_cast<double>(question_tokens) / n,
                  total ? static_cast<double>(unk) / static_cast<double>(total) : 0.0);
    log << line;
    summary.split_sizes.emplace_back(splits[i].name, parts[i].size());
  }
  if (loaded.skipped) log << "skipped " << loaded.skipped << " examples with unusable answers\n";
  return summary;
}

std::vector<RawExample> load_prepared_split(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read prepared split " + path.string());
  std::vector<RawExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RawExample ex;
      ex.id = j.at("id").get<std::string>();
      ex.passage = j.at("passage").get<std::string>();
      ex.question = j.at("question").get<std::string>();
      ex.answer = j.at("answer").get<std::string>();
      ex.answer_start = j.at("answer_start").get<std::size_t>();
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AQG_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring AQG_THREADS='" << env << "'\n";
    }
  }
  return n;
}

// ---- commands --------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

// Flags shared by every command that builds a RunConfig.
struct ConfigFlags {
  std::string config;
  std::string profile;
  std::string mode;
  std::string k;
  std::string seed;
  std::string steps;
  std::string lr;
  std::string batch;
  std::string beam;
  std::vector<std::string> sets;

  void attach(CLI::App& app, bool training) {
    app.add_option("--config", config, "key=value run configuration file");
    app.add_option("--profile", profile, "desk or paper");
    app.add_option("--mode", mode, "comma list of ap,rs,cp,aa");
    app.add_option("--k", k, "custom-product constant");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--beam", beam, "beam size");
    if (training) {
      app.add_option("--steps", steps, "training steps");
      app.add_option("--lr", lr, "base learning rate");
      app.add_option("--batch", batch, "batch size");
    }
    app.add_option("--set", sets, "extra key=value override (repeatable)");
  }

  std::vector<std::pair<std::string, std::string>> settings() const {
    std::vector<std::pair<std::string, std::string>> s;
    if (!config.empty()) s = read_config_file(config);
    auto push = [&](const char* key, const std::string& v) {
      if (!v.empty()) s.emplace_back(key, v);
    };
    push("profile", profile);
    push("mode", mode);
    push("k", k);
    push("seed", seed);
    push("steps", steps);
    push("lr", lr);
    push("batch_size", batch);
    push("beam", beam);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      s.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return s;
  }

  RunConfig resolve() const { return resolve_run_config(settings()); }
};

struct TrainJob {
  fs::path data;
  std::string train_split = "train";
  std::string dev_split = "dev";
  bool dev_required = false;
  fs::path out;
  fs::path resume;
};

fs::path train_run(const RunConfig& rc, const TrainJob& job, std::ostream& out) {
  const Vocabulary vocab = Vocabulary::load(job.data / "vocab.tsv");
  const auto train_set = load_prepared_split(job.data / (job.train_split + ".jsonl"));
  std::vector<RawExample> dev_set;
  const fs::path dev_path = job.data / (job.dev_split + ".jsonl");
  if (job.dev_required || fs::exists(dev_path)) dev_set = load_prepared_split(dev_path);

  ModelConfig model = rc.model;
  if (!rc.vocab_size_set) model.vocab_size = vocab.size();

  std::optional<Checkpoint> resume;
  if (!job.resume.empty()) {
    resume = load_checkpoint(job.resume);
    if (!(resume->model == model)) {
      throw ConfigError("checkpoint " + job.resume.string() + " was trained with a different model config");
    }
  }

  fs::create_directories(job.out);
  const fs::path ckpt = job.out / "model.ckpt";
  write_text(job.out / "run.cfg", rc.serialize());

  TrainData data;
  data.train = train_set;
  data.dev = dev_set;
  data.vocab = &vocab;
  data.limits = rc.limits;
  TrainOptions opts;
  opts.checkpoint_path = ckpt;
  if (resume) opts.resume = &*resume;
  opts.on_step = [&](const LossRecord& r) {
    if (r.step % 100 == 0 || r.step == rc.train.steps) {
      char line[160];
      std::snprintf(line, sizeof line, "step %zu lr %.3e loss %.6f", r.step, r.lr, r.train_loss);
      out << line;
      if (r.val_loss) {
        std::snprintf(line, sizeof line, " val %.6f", *r.val_loss);
        out << line;
      }
      out << "\n";
    }
  };
  out << "training " << mode_label(model.conditioning) << ": " << train_set.size()
      << " examples, " << rc.train.steps << " steps\n";
  const TrainResult result = train(data, model, rc.train, opts);
  write_loss_csv(result.log, job.out / "loss.csv");
  out << "checkpoint: " << ckpt.string() << "\n";
  return ckpt;
}

struct GenerateJob {
  fs::path checkpoint;
  fs::path data;
  std::string split = "dev";
  fs::path out;
  bool greedy = false;
  bool mode_given = false;
};

void generate_run(const RunConfig& rc, const GenerateJob& job, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(job.checkpoint);
  if (job.mode_given && !(ckpt.model.conditioning == rc.model.conditioning)) {
    throw ConfigError("checkpoint was trained with mode " + mode_label(ckpt.model.conditioning) +
                      " but " + mode_label(rc.model.conditioning) + " was requested");
  }
  const Vocabulary vocab = Vocabulary::load(job.data / "vocab.tsv");
  if (vocab.size() > ckpt.model.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " tokens but the checkpoint model only " + std::to_string(ckpt.model.vocab_size));
  }
  const auto examples = load_prepared_split(job.data / (job.split + ".jsonl"));
  if (examples.empty()) throw DataError("split '" + job.split + "' is empty");
  const Seq2SeqModel<float> model = model_from_checkpoint(ckpt);
  DecodeOptions opts = rc.decode;
  const auto outputs = generate_all(model, examples, vocab, rc.limits, opts, job.greedy, worker_threads());
  const std::string label = mode_label(ckpt.model.conditioning);
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    preds.push_back({examples[i].id, outputs[i].text, outputs[i].normalized_score, label});
  }
  if (!job.out.parent_path().empty()) fs::create_directories(job.out.parent_path());
  write_predictions(preds, job.out);
  out << "wrote " << preds.size() << " predictions to " << job.out.string() << "\n";
}

struct EvaluateJob {
  fs::path predictions;
  fs::path data;
  std::string split = "dev";
  std::string oracle = "lexical";
  std::string mode;
  fs::path out;
  double beta = 1.2;
};

EvalReport evaluate_run(const EvaluateJob& job, std::ostream& out) {
  const auto oracle = make_oracle(job.oracle);
  const auto preds = read_predictions(job.predictions);
  const auto dataset = load_prepared_split(job.data / (job.split + ".jsonl"));
  std::string mode = job.mode;
  if (mode.empty()) {
    std::set<std::string> modes;
    for (const auto& p : preds) modes.insert(p.mode);
    if (modes.size() > 1) throw DataError("predictions mix several modes; pass --mode");
    mode = modes.empty() || modes.begin()->empty() ? "UNKNOWN" : *modes.begin();
  }
  const EvalReport report = evaluate(preds, dataset, *oracle, mode, job.beta);
  fs::create_directories(job.out);
  write_text(job.out / "report.json", report_json(report));
  write_text(job.out / "report.txt", report_table({report}));
  out << report_table({report});
  return report;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Answer-aware question generation: data preparation, training, decoding and evaluation"};
  app.name("aqg");
  app.require_subcommand(1);

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "tokenize a SQuAD file into splits and a vocabulary");
  std::string prep_squad, prep_out;
  std::vector<std::string> prep_splits;
  ConfigFlags prep_cfg;
  prep->add_option("--squad", prep_squad, "SQuAD 1.1 JSON file")->required();
  prep->add_option("--split", prep_splits, "name=id-list file (repeatable; first builds the vocabulary)")
      ->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--config", prep_cfg.config, "key=value run configuration file");
  prep->add_option("--set", prep_cfg.sets, "extra key=value override (repeatable)");

  // train
  auto* tr = app.add_subcommand("train", "train a model on prepared data");
  ConfigFlags tr_cfg;
  tr_cfg.attach(*tr, true);
  TrainJob tr_job;
  std::string tr_data, tr_out, tr_resume, tr_dev;
  tr->add_option("--data", tr_data, "prepared data directory")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--train-split", tr_job.train_split, "training split name");
  tr->add_option("--dev-split", tr_dev, "validation split name");
  tr->add_option("--resume", tr_resume, "continue from a checkpoint");

  // generate
  auto* gen = app.add_subcommand("generate", "generate questions with a trained checkpoint");
  ConfigFlags gen_cfg;
  gen_cfg.attach(*gen, false);
  GenerateJob gen_job;
  std::string gen_ckpt, gen_data, gen_out;
  gen->add_option("--checkpoint", gen_ckpt, "model checkpoint")->required();
  gen->add_option("--data", gen_data, "prepared data directory")->required();
  gen->add_option("--split", gen_job.split, "split to generate for");
  gen->add_option("--out", gen_out, "predictions JSONL file")->required();
  gen->add_flag("--greedy", gen_job.greedy, "greedy decoding instead of beam search");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against a prepared split");
  EvaluateJob ev_job;
  std::string ev_pred, ev_data, ev_out;
  ev->add_option("--predictions", ev_pred, "predictions JSONL file")->required();
  ev->add_option("--data", ev_data, "prepared data directory")->required();
  ev->add_option("--split", ev_job.split, "reference split");
  ev->add_option("--oracle", ev_job.oracle, "QA oracle: lexical, gold or empty");
  ev->add_option("--mode", ev_job.mode, "row label (default: from the predictions)");
  ev->add_option("--beta", ev_job.beta, "ROUGE-L recall weight");
  ev->add_option("--out", ev_out, "report directory")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference checks of every backward rule");
  std::string gc_only, gc_flip;
  gc->add_option("--only", gc_only, "run a single named check");
  gc->add_option("--inject-sign-flip", gc_flip)->group("");

  // make-synthetic
  auto* syn = app.add_subcommand("make-synthetic", "write a small generated SQuAD-style dataset");
  std::string syn_out;
  std::size_t syn_count = 32, syn_train = 0;
  std::uint64_t syn_seed = 1;
  syn->add_option("--out", syn_out, "output directory")->required();
  syn->add_option("--count", syn_count, "number of examples");
  syn->add_option("--train", syn_train, "examples in train.ids (default: all)");
  syn->add_option("--seed", syn_seed, "generator seed");

  // matrix
  auto* mx = app.add_subcommand("matrix", "train, generate and evaluate all seven conditioning modes");
  ConfigFlags mx_cfg;
  mx_cfg.attach(*mx, true);
  std::string mx_data, mx_out, mx_oracle = "lexical", mx_train = "train", mx_eval = "dev";
  bool mx_greedy = false;
  mx->add_option("--data", mx_data, "prepared data directory")->required();
  mx->add_option("--out", mx_out, "output directory")->required();
  mx->add_option("--train-split", mx_train, "training split name");
  mx->add_option("--eval-split", mx_eval, "split to generate for and score");
  mx->add_option("--oracle", mx_oracle, "QA oracle");
  mx->add_flag("--greedy", mx_greedy, "greedy decoding instead of beam search");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prep) {
      const RunConfig rc = prep_cfg.resolve();
      std::vector<SplitSpec> splits;
      for (const auto& s : prep_splits) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw ConfigError("--split expects name=path, got '" + s + "'");
        }
        splits.push_back({s.substr(0, eq), s.substr(eq + 1)});
      }
      prepare_data(prep_squad, splits, prep_out, rc.vocab_max, rc.limits, out);
    } else if (*tr) {
      const RunConfig rc = tr_cfg.resolve();
      tr_job.data = tr_data;
      tr_job.out = tr_out;
      tr_job.resume = tr_resume;
      if (!tr_dev.empty()) {
        tr_job.dev_split = tr_dev;
        tr_job.dev_required = true;
      }
      train_run(rc, tr_job, out);
    } else if (*gen) {
      const RunConfig rc = gen_cfg.resolve();
      gen_job.checkpoint = gen_ckpt;
      gen_job.data = gen_data;
      gen_job.out = gen_out;
      gen_job.mode_given = !gen_cfg.mode.empty();
      generate_run(rc, gen_job, out);
    } else if (*ev) {
      ev_job.predictions = ev_pred;
      ev_job.data = ev_data;
      ev_job.out = ev_out;
      evaluate_run(ev_job, out);
    } else if (*gc) {
      set_backward_sign_flip(gc_flip);
      std::vector<GradCheckReport> reports;
      try {
        reports = run_grad_suite(gc_only);
      } catch (...) {
        set_backward_sign_flip("");
        throw;
      }
      set_backward_sign_flip("");
      if (reports.empty()) throw ConfigError("no gradient check named '" + gc_only + "'");
      out << format_grad_reports(reports);
      const bool ok = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed; });
      return ok ? kExitOk : kExitNumeric;
    } else if (*syn) {
      const auto paths = write_synthetic_dataset(syn_out, syn_count, syn_train ? syn_train : syn_count, syn_seed);
      for (const auto& p : paths) out << "wrote " << p.string() << "\n";
    } else if (*mx) {
      const RunConfig base = mx_cfg.resolve();
      std::vector<EvalReport> rows;
      for (const auto& cond : experiment_matrix(base.model.conditioning.k)) {
        RunConfig rc = base;
        rc.model.conditioning.ap = cond.ap;
        rc.model.conditioning.rs = cond.rs;
        rc.model.conditioning.cp = cond.cp;
        rc.model.conditioning.aa = cond.aa;
        const std::string label = mode_label(cond);
        const fs::path dir = fs::path(mx_out) / label;
        TrainJob tj;
        tj.data = mx_data;
        tj.train_split = mx_train;
        tj.out = dir;
        const fs::path ckpt = train_run(rc, tj, out);
        GenerateJob gj;
        gj.checkpoint = ckpt;
        gj.data = mx_data;
        gj.split = mx_eval;
        gj.out = dir / "predictions.jsonl";
        gj.greedy = mx_greedy;
        generate_run(rc, gj, out);
        EvaluateJob ej;
        ej.predictions = gj.out;
        ej.data = mx_data;
        ej.split = mx_eval;
        ej.oracle = mx_oracle;
        ej.mode = label;
        ej.out = dir;
        rows.push_back(evaluate_run(ej, out));
      }
      nlohmann::ordered_json all = nlohmann::ordered_json::array();
      for (const auto& r : rows) all.push_back(nlohmann::ordered_json::parse(report_json(r)));
      write_text(fs::path(mx_out) / "matrix.json", all.dump(2) + "\n");
      write_text(fs::path(mx_out) / "table.txt", report_table(rows));
      out << "\n" << report_table(rows);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"aqg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace aqg
