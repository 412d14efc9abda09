#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <sstream>

#include "aqg/cli.hpp"
#include "aqg/errors.hpp"
#include "aqg/eval.hpp"
#include "aqg/grad_suite.hpp"
#include "aqg/synthetic.hpp"
#include "aqg/training.hpp"

namespace py = pybind11;
using namespace aqg;

namespace {

// Checkpoint plus the model built from it; the model keeps a reference to
// nothing outside this struct.
struct LoadedModel {
  Checkpoint checkpoint;
  std::unique_ptr<Seq2SeqModel<float>> model;
};

}  // namespace

PYBIND11_MODULE(_aqg, m) {
  m.doc() = "answer-aware question generation";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<ConfigError> config(m, "ConfigError", base.ptr());
  static py::exception<DataError> data(m, "DataError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config(e.what());
    } catch (const DataError& e) {
      data(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  py::class_<RawExample>(m, "RawExample")
      .def(py::init<>())
      .def(py::init([](std::string id, std::string passage, std::string question, std::string answer,
                       std::size_t start) { return RawExample{id, passage, question, answer, start}; }),
           py::arg("id"), py::arg("passage"), py::arg("question"), py::arg("answer"), py::arg("answer_start"))
      .def_readwrite("id", &RawExample::id)
      .def_readwrite("passage", &RawExample::passage)
      .def_readwrite("question", &RawExample::question)
      .def_readwrite("answer", &RawExample::answer)
      .def_readwrite("answer_start", &RawExample::answer_start)
      .def("__repr__", [](const RawExample& e) { return "<RawExample " + e.id + ">"; });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("build", [](const std::vector<RawExample>& c, std::size_t max_size) {
        return Vocabulary::build(c, max_size);
      }, py::arg("corpus"), py::arg("max_size") = 8000)
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("id", &Vocabulary::id)
      .def("token", &Vocabulary::token)
      .def("encode", [](const Vocabulary& v, const std::string& text, std::size_t max_len) {
        return encode(text, v, max_len);
      }, py::arg("text"), py::arg("max_len") = 512)
      .def("decode", [](const Vocabulary& v, const std::vector<TokenId>& ids) { return detokenize(ids, v); })
      .def("__len__", &Vocabulary::size)
      .def("__contains__", &Vocabulary::contains);

  m.def("tokenize", &tokenize);
  m.def("select_answer_sentences",
        [](const std::string& passage, const std::string& answer, std::size_t begin, std::size_t end) {
          auto s = select_answer_sentences(passage, answer, begin, end);
          return py::make_tuple(s.text, s.fallback);
        });
  m.def("build_ap_input",
        [](const std::vector<TokenId>& a, const std::vector<TokenId>& x, bool sep) {
          return build_ap_input(a, x, sep);
        },
        py::arg("answer_ids"), py::arg("passage_ids"), py::arg("separator") = true);

  m.def("parse_mode", [](const std::string& s, double k) { return mode_label(parse_mode(s, k)); },
        py::arg("modes"), py::arg("k") = 100.0, "canonical label for a comma list such as 'ap,rs'");
  m.def("mode_label", [](const std::string& s) { return mode_label(parse_mode(s)); });
  m.def("experiment_matrix", [] {
    std::vector<std::string> out;
    for (const auto& c : experiment_matrix()) out.push_back(mode_label(c));
    return out;
  });

  m.def("rouge_l", [](const std::vector<std::string>& h, const std::vector<std::string>& r, double beta) {
    return rouge_l(h, r, beta);
  }, py::arg("hypothesis"), py::arg("reference"), py::arg("beta") = 1.2);
  m.def("meteor", [](const std::vector<std::string>& h, const std::vector<std::string>& r) { return meteor(h, r); });
  m.def("normalize_answer", &normalize_answer);
  m.def("oracle_answer", [](const std::string& name, const std::string& passage, const std::string& question) {
    return make_oracle(name)->answer(passage, question);
  });

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("mode", &EvalReport::mode)
      .def_readonly("rouge_l", &EvalReport::rouge_l)
      .def_readonly("meteor", &EvalReport::meteor)
      .def_readonly("answering_accuracy", &EvalReport::answering_accuracy)
      .def_readonly("n_examples", &EvalReport::n_examples)
      .def_readonly("oracle_failures", &EvalReport::oracle_failures)
      .def_static("from_json", &parse_report_json)
      .def("to_json", [](const EvalReport& r) { return report_json(r); });

  m.def("synthetic_corpus", &synthetic_corpus, py::arg("count") = 32, py::arg("seed") = 1);

  py::class_<DecodeOptions>(m, "DecodeOptions")
      .def(py::init<>())
      .def_readwrite("beam", &DecodeOptions::beam)
      .def_readwrite("max_len", &DecodeOptions::max_len)
      .def_readwrite("alpha", &DecodeOptions::alpha);

  py::class_<GenerationOutput>(m, "GenerationOutput")
      .def_readonly("tokens", &GenerationOutput::tokens)
      .def_readonly("text", &GenerationOutput::text)
      .def_readonly("score", &GenerationOutput::score)
      .def_readonly("length", &GenerationOutput::length);

  py::class_<LoadedModel>(m, "Model")
      .def_property_readonly("mode", [](const LoadedModel& l) { return mode_label(l.checkpoint.model.conditioning); })
      .def_property_readonly("step", [](const LoadedModel& l) { return l.checkpoint.step; })
      .def_property_readonly("parameter_count", [](const LoadedModel& l) { return l.model->parameter_count(); });

  m.def("load_checkpoint_model", [](const std::filesystem::path& p) {
    auto l = std::make_unique<LoadedModel>();
    l->checkpoint = load_checkpoint(p);
    l->model = std::make_unique<Seq2SeqModel<float>>(model_from_checkpoint(l->checkpoint));
    return l;
  });
  m.def("generate",
        [](const LoadedModel& l, const RawExample& ex, const Vocabulary& v, const DecodeOptions& o, bool greedy) {
          py::gil_scoped_release release;
          return aqg::generate(*l.model, ex, v, TextLimits{}, o, greedy);
        },
        py::arg("model"), py::arg("example"), py::arg("vocab"), py::arg("options") = DecodeOptions{},
        py::arg("greedy") = false);

  m.def("run_grad_suite", [](const std::string& only) {
    std::vector<py::dict> out;
    for (const auto& r : run_grad_suite(only)) {
      py::dict d;
      d["op"] = r.op;
      d["max_rel_error"] = r.max_rel_error;
      d["tolerance"] = r.tolerance;
      d["passed"] = r.passed;
      out.push_back(d);
    }
    return out;
  }, py::arg("only") = "");

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, "runs one aqg subcommand and returns (exit code, stdout, stderr)");
}
