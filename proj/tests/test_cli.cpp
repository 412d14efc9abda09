#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "aqg/cli.hpp"
#include "aqg/errors.hpp"
#include "aqg/synthetic.hpp"

using namespace aqg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("aqg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const std::vector<std::string> kTiny{"--set", "d=16", "--set", "layers=1", "--set", "heads=2",
                                     "--set", "d_ff=32", "--set", "max_len=8"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// make-synthetic + prepare-data into <dir>/data
fs::path prepared(const fs::path& dir, std::size_t count = 10, std::size_t train = 6) {
  auto raw = dir / "raw";
  REQUIRE(cli({"make-synthetic", "--out", raw.string(), "--count", std::to_string(count), "--train",
               std::to_string(train)})
              .code == 0);
  auto data = dir / "data";
  auto r = cli({"prepare-data", "--squad", (raw / "squad.json").string(), "--split",
                "train=" + (raw / "train.ids").string(), "--split", "dev=" + (raw / "dev.ids").string(), "--out",
                data.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return data;
}

std::size_t line_count(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config text parsing") {
  auto kv = parse_config_text("# comment\n\nsteps = 10\nmode=ap,rs\n", "mem");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"steps", "10"});
  CHECK(kv[1].second == "ap,rs");
  CHECK_THROWS_AS(parse_config_text("no equals sign\n", "mem"), ConfigError);
}

TEST_CASE("run config resolution") {
  auto c = resolve_run_config({{"mode", "rs,ap"}, {"steps", "7"}, {"beam", "2"}});
  CHECK(c.profile == "desk");
  CHECK(mode_label(c.model.conditioning) == "AP+RS");
  CHECK(c.train.steps == 7);
  CHECK(c.decode.beam == 2);
  CHECK(c.model.d == 128);

  auto p = resolve_run_config({{"profile", "paper"}});
  CHECK(p.model.d == 768);
  CHECK(p.model.layers == 6);
  CHECK(p.train.lr == 1e-5);
  CHECK(p.train.batch_size == 8);
  CHECK(p.train.steps == 100000);
  CHECK(p.decode.beam == 4);

  CHECK_THROWS_AS(resolve_run_config({{"profile", "paper"}, {"d", "128"}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config({{"profile", "paper"}, {"steps", "10"}}), ConfigError);
  CHECK_NOTHROW(resolve_run_config({{"profile", "paper"}, {"d", "768"}, {"mode", "aa"}}));
  try {
    resolve_run_config({{"widgets", "3"}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("widgets") != std::string::npos);
  }
  CHECK_THROWS_AS(resolve_run_config({{"profile", "cloud"}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config({{"steps", "many"}}), ConfigError);
}

TEST_CASE("mode labels") {
  CHECK(mode_label(parse_mode("ap,rs")) == "AP+RS");
  CHECK(mode_label(parse_mode("cp,rs,ap")) == "AP+RS+CP");
  CHECK(mode_label(parse_mode("")) == "BASE");
  CHECK(parse_mode_label("CP+AP") == parse_mode("ap,cp"));
  CHECK_THROWS_AS(parse_mode("ap,xx"), ConfigError);
  std::vector<std::string> rows;
  for (const auto& c : experiment_matrix()) rows.push_back(mode_label(c));
  CHECK(rows == std::vector<std::string>{"AA", "CP", "AP", "RS+CP", "AP+RS", "AP+CP", "AP+RS+CP"});
}

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"train"}).code == kExitUsage);
  auto dir = temp_dir("usage");
  auto r = cli({"evaluate", "--predictions", "x", "--data", dir.string(), "--out", dir.string(), "--oracle", "bert"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("lexical") != std::string::npos);
}

TEST_CASE("prepare-data records and determinism") {
  auto dir = temp_dir("prepare");
  auto data = prepared(dir);
  auto train = slurp(data / "train.jsonl");
  CHECK(line_count(train) == 6);
  CHECK(line_count(slurp(data / "dev.jsonl")) == 4);
  CHECK(fs::exists(data / "vocab.tsv"));
  auto raw = dir / "raw";
  auto again = dir / "again";
  REQUIRE(cli({"prepare-data", "--squad", (raw / "squad.json").string(), "--split",
               "train=" + (raw / "train.ids").string(), "--split", "dev=" + (raw / "dev.ids").string(), "--out",
               again.string()})
              .code == 0);
  CHECK(slurp(again / "train.jsonl") == train);
  CHECK(slurp(again / "vocab.tsv") == slurp(data / "vocab.tsv"));
  auto loaded = load_prepared_split(data / "dev.jsonl");
  CHECK(loaded.size() == 4);

  auto r = cli({"prepare-data", "--squad", (raw / "squad.json").string(), "--split",
                "train=" + (dir / "nope.ids").string(), "--out", (dir / "x").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("nope.ids") != std::string::npos);
}

TEST_CASE("train, generate, evaluate") {
  auto dir = temp_dir("pipeline");
  auto data = prepared(dir);

  auto run_aa = dir / "aa";
  auto t = cli(cat({"train", "--data", data.string(), "--out", run_aa.string(), "--mode", "aa", "--steps", "3"}, kTiny));
  REQUIRE_MESSAGE(t.code == 0, t.err);
  CHECK(fs::exists(run_aa / "model.ckpt"));
  CHECK(fs::exists(run_aa / "loss.csv"));
  auto ck = load_checkpoint(run_aa / "model.ckpt");
  CHECK(ck.weights.count("decoder.layers.0.answer_attn.q.weight") == 1);

  auto run_ap = dir / "ap";
  REQUIRE(cli(cat({"train", "--data", data.string(), "--out", run_ap.string(), "--mode", "ap", "--steps", "3"}, kTiny))
              .code == 0);
  auto ck_ap = load_checkpoint(run_ap / "model.ckpt");
  for (const auto& [name, _] : ck_ap.weights) CHECK(name.find("answer_attn") == std::string::npos);

  auto gen = [&](const std::string& out, std::vector<std::string> extra) {
    auto args = cat({"generate", "--checkpoint", (run_ap / "model.ckpt").string(), "--data", data.string(), "--out",
                     (dir / out).string()},
                    extra);
    return cli(cat(args, {"--set", "max_len=8"}));
  };
  REQUIRE(gen("beam4.jsonl", {}).code == 0);
  REQUIRE(gen("beam4b.jsonl", {}).code == 0);
  CHECK(line_count(slurp(dir / "beam4.jsonl")) == 4);
  CHECK(slurp(dir / "beam4.jsonl") == slurp(dir / "beam4b.jsonl"));
  REQUIRE(gen("beam1.jsonl", {"--beam", "1"}).code == 0);
  REQUIRE(gen("greedy.jsonl", {"--greedy"}).code == 0);
  auto b1 = read_predictions(dir / "beam1.jsonl"), gr = read_predictions(dir / "greedy.jsonl");
  REQUIRE(b1.size() == gr.size());
  for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i].question == gr[i].question);

  CHECK(gen("wrong.jsonl", {"--mode", "cp"}).code == kExitUsage);

  auto ev = cli({"evaluate", "--predictions", (dir / "beam4.jsonl").string(), "--data", data.string(), "--out",
                 (dir / "report").string()});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  auto report = parse_report_json(slurp(dir / "report" / "report.json"));
  CHECK(report.mode == "AP");
  CHECK(report.n_examples == 4);
  report.check_ranges();
  CHECK(slurp(dir / "report" / "report.txt").find("ROUGE-L") != std::string::npos);

  // references as predictions
  std::vector<Prediction> refs;
  for (const auto& e : load_prepared_split(data / "dev.jsonl")) refs.push_back({e.id, e.question, 0.0, "AP"});
  write_predictions(refs, dir / "refs.jsonl");
  REQUIRE(cli({"evaluate", "--predictions", (dir / "refs.jsonl").string(), "--data", data.string(), "--oracle", "gold",
               "--out", (dir / "refs")
                            .string()})
              .code == 0);
  auto perfect = parse_report_json(slurp(dir / "refs" / "report.json"));
  CHECK(perfect.rouge_l == 1.0);
  CHECK(perfect.answering_accuracy == 100.0);

  // missing ids
  write_predictions({refs[0]}, dir / "short.jsonl");
  auto miss = cli({"evaluate", "--predictions", (dir / "short.jsonl").string(), "--data", data.string(), "--out",
                   (dir / "short").string()});
  CHECK(miss.code == kExitData);
  CHECK(miss.err.find(refs[1].id) != std::string::npos);
}

TEST_CASE("grad-check subcommand") {
  auto ok = cli({"grad-check", "--only", "softmax"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("max_rel_error") != std::string::npos);
  auto bad = cli({"grad-check", "--only", "matmul", "--inject-sign-flip", "matmul"});
  CHECK(bad.code != 0);
  CHECK(backward_sign_flip().empty());
}
