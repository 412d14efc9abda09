#include "aqg/grad_suite.hpp"

#include <cstdio>
#include <random>
#include <sstream>

#include "aqg/model.hpp"

namespace aqg {

namespace {

using DT = DoubleTensor;
using Inputs = std::vector<DT>;

// Parameters of `cfg` whose names start with `prefix`, as (names, tensors).
struct Params {
  std::vector<std::string> names;
  Inputs tensors;
};

Params select(const Weights<double>& all, const std::string& prefix) {
  Params p;
  for (const auto& [name, t] : all) {
    if (name.rfind(prefix, 0) == 0) {
      p.names.push_back(name);
      p.tensors.push_back(t.detach());
    }
  }
  return p;
}

Weights<double> rebuild(const std::vector<std::string>& names, const Inputs& in,
                        std::size_t offset) {
  Weights<double> w;
  for (std::size_t i = 0; i < names.size(); ++i) w.emplace(names[i], in[offset + i]);
  return w;
}

// Biases and gains start at 0 and 1; perturb everything so the check does
// not sit on a special point.
Inputs jitter(Inputs in, std::uint64_t seed) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const DT noise = random_normal(in[i].shape(), seed + i, 0.1);
    auto d = in[i].mutable_data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += noise.data()[j];
  }
  return in;
}

DT near_one(const Shape& shape, std::uint64_t seed) {
  DT t = random_normal(shape, seed, 0.1);
  for (auto& v : t.mutable_data()) v += 1.0;
  return t;
}

GradCheckOptions kink_safe() {
  GradCheckOptions opt;
  opt.skip_relu_crossings = true;
  return opt;
}

Inputs concat(Inputs a, const Inputs& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

ModelConfig small_config(bool aa) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = 10;
  cfg.max_positions = 8;
  cfg.dropout = 0.0;
  cfg.conditioning.aa = aa;
  return cfg;
}

std::vector<std::uint8_t> valid_mask(std::size_t batch, std::size_t n) {
  // Second row loses its last position.
  std::vector<std::uint8_t> v(batch * n, 1);
  if (batch > 1) v[2 * n - 1] = 0;
  return v;
}

GradCheckReport full_model_check() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_ff = 32;
  cfg.vocab_size = 12;
  cfg.max_positions = 12;
  cfg.dropout = 0.0;
  cfg.conditioning = parse_mode("ap,rs,cp,aa", 2.0);
  const auto all = Seq2SeqModel<double>::init_weights(cfg, 11);
  const Params p = select(all, "");

  Batch batch;
  batch.source = IdBatch::pad({{5, 4, 6, 7, 8, 9}, {10, 4, 6, 11, 7}});
  batch.answer = IdBatch::pad({{5}, {10, 11}});
  batch.decoder_input = IdBatch::pad({{1, 6, 7, 5}, {1, 8, 9}});
  batch.labels = {6, 7, 5, 2, 8, 9, 2, -1};

  GradCheckOptions opt;
  opt.tolerance = 1e-3;
  opt.skip_relu_crossings = true;
  return grad_check(
      "full_model",
      [&](const Inputs& in) {
        Seq2SeqModel<double> model(cfg, rebuild(p.names, in, 0));
        return model.forward_loss(batch);
      },
      jitter(p.tensors, 500), opt);
}

}  // namespace

std::vector<GradSuiteEntry> grad_suite() {
  std::vector<GradSuiteEntry> s;
  auto reg = [&](std::string name, std::function<GradCheckReport()> fn) {
    s.push_back({std::move(name), std::move(fn)});
  };

  reg("matmul", [] {
    return grad_check("matmul", [](const Inputs& in) { return matmul(in[0], in[1]); },
                      std::vector<Shape>{{4, 5}, {5, 3}});
  });
  reg("matmul_batched", [] {
    return grad_check("matmul_batched", [](const Inputs& in) { return matmul(in[0], in[1]); },
                      std::vector<Shape>{{2, 1, 3, 4}, {3, 4, 2}});
  });
  reg("add", [] {
    return grad_check("add", [](const Inputs& in) { return add(in[0], in[1]); },
                      std::vector<Shape>{{2, 3, 4}, {3, 1}});
  });
  reg("sub", [] {
    return grad_check("sub", [](const Inputs& in) { return sub(in[0], in[1]); },
                      std::vector<Shape>{{3, 4}, {4}});
  });
  reg("mul", [] {
    return grad_check("mul", [](const Inputs& in) { return mul(in[0], in[1]); },
                      std::vector<Shape>{{2, 1, 4}, {3, 4}});
  });
  reg("scale", [] {
    return grad_check("scale", [](const Inputs& in) { return scale(in[0], 2.5); },
                      std::vector<Shape>{{3, 4}});
  });
  reg("relu", [] {
    return grad_check("relu", [](const Inputs& in) { return relu(in[0]); },
                      std::vector<Shape>{{4, 5}});
  });
  reg("softmax", [] {
    return grad_check("softmax", [](const Inputs& in) { return softmax(in[0], -1); },
                      std::vector<Shape>{{3, 5}});
  });
  reg("softmax_axis0", [] {
    return grad_check("softmax_axis0", [](const Inputs& in) { return softmax(in[0], 0); },
                      std::vector<Shape>{{4, 3}});
  });
  reg("layer_norm", [] {
    return grad_check("layer_norm",
                      [](const Inputs& in) { return layer_norm(in[0], in[1], in[2], 1e-5); },
                      std::vector<Shape>{{3, 6}, {6}, {6}});
  });
  reg("reshape", [] {
    return grad_check("reshape", [](const Inputs& in) { return reshape(in[0], {6, 2}); },
                      std::vector<Shape>{{3, 4}});
  });
  reg("permute", [] {
    return grad_check("permute", [](const Inputs& in) { return permute(in[0], {2, 0, 1}); },
                      std::vector<Shape>{{2, 3, 4}});
  });
  reg("transpose", [] {
    return grad_check("transpose", [](const Inputs& in) { return transpose(in[0], 0, 1); },
                      std::vector<Shape>{{3, 5}});
  });
  reg("embedding", [] {
    static const std::vector<std::int32_t> ids = {1, 3, 1, 0, 4, 3};
    return grad_check("embedding",
                      [](const Inputs& in) { return embedding(in[0], std::span(ids), {2, 3}); },
                      std::vector<Shape>{{5, 4}});
  });
  reg("sum", [] {
    return grad_check("sum", [](const Inputs& in) { return sum(in[0]); },
                      std::vector<Shape>{{3, 4}});
  });
  reg("mean", [] {
    return grad_check("mean", [](const Inputs& in) { return mean(in[0]); },
                      std::vector<Shape>{{3, 4}});
  });
  reg("cross_entropy", [] {
    static const std::vector<std::int32_t> targets = {2, -1, 0, 4};
    return grad_check("cross_entropy",
                      [](const Inputs& in) { return cross_entropy(in[0], std::span(targets)); },
                      std::vector<Shape>{{2, 2, 5}});
  });
  reg("dropout", [] {
    return grad_check("dropout",
                      [](const Inputs& in) {
                        std::mt19937_64 rng(3);
                        return dropout(in[0], 0.3, rng);
                      },
                      std::vector<Shape>{{4, 6}});
  });
  reg("softmax_matmul_chain", [] {
    return grad_check("softmax_matmul_chain",
                      [](const Inputs& in) { return matmul(softmax(matmul(in[0], in[1]), -1), in[2]); },
                      std::vector<Shape>{{3, 4}, {4, 5}, {5, 2}});
  });
  reg("attention", [] {
    return grad_check("attention",
                      [](const Inputs& in) {
                        const auto mask = key_padding_mask<double>(valid_mask(2, 4), 2, 4);
                        return attention(in[0], in[1], in[2], &mask).output;
                      },
                      std::vector<Shape>{{2, 1, 3, 4}, {2, 1, 4, 4}, {2, 1, 4, 4}});
  });
  reg("multi_head_attention", [] {
    const auto all = Seq2SeqModel<double>::init_weights(small_config(false), 3);
    const Params p = select(all, "decoder.layers.0.cross_attn");
    return grad_check(
        "multi_head_attention",
        [p](const Inputs& in) {
          const auto w = rebuild(p.names, in, 2);
          const auto mask = key_padding_mask<double>(valid_mask(2, 5), 2, 5);
          return multi_head_attention(in[0], in[1],
                                      AttentionParams<double>::from(w, "decoder.layers.0.cross_attn"),
                                      2, &mask, ForwardContext<double>{});
        },
        concat({random_normal({2, 3, 8}, 21), random_normal({2, 5, 8}, 22)}, jitter(p.tensors, 30)));
  });
  reg("encoder_layer", [] {
    const auto cfg = small_config(false);
    const auto all = Seq2SeqModel<double>::init_weights(cfg, 4);
    const Params p = select(all, "encoder.layers.0.");
    return grad_check(
        "encoder_layer",
        [p, cfg](const Inputs& in) {
          const auto w = rebuild(p.names, in, 1);
          const auto mask = key_padding_mask<double>(valid_mask(2, 4), 2, 4);
          return encoder_layer(in[0], &mask, w, "encoder.layers.0", cfg, ForwardContext<double>{});
        },
        concat({random_normal({2, 4, 8}, 41)}, jitter(p.tensors, 50)), kink_safe());
  });
  reg("decoder_layer", [] {
    const auto cfg = small_config(true);
    const auto all = Seq2SeqModel<double>::init_weights(cfg, 5);
    const Params p = select(all, "decoder.layers.0.");
    return grad_check(
        "decoder_layer",
        [p, cfg](const Inputs& in) {
          const auto w = rebuild(p.names, in, 3);
          const auto self_mask = causal_mask<double>(3);
          const auto mem_mask = key_padding_mask<double>(valid_mask(2, 4), 2, 4);
          return decoder_layer(in[0], in[1], &self_mask, &mem_mask, &in[2], w, "decoder.layers.0",
                               cfg, ForwardContext<double>{});
        },
        concat({random_normal({2, 3, 8}, 61), random_normal({2, 4, 8}, 62),
                random_normal({2, 8}, 63)},
               jitter(p.tensors, 70)),
        kink_safe());
  });
  reg("answer_attention_block", [] {
    const auto all = Seq2SeqModel<double>::init_weights(small_config(true), 6);
    const Params p = select(all, "decoder.layers.0.answer_attn");
    return grad_check(
        "answer_attention_block",
        [p](const Inputs& in) {
          const auto w = rebuild(p.names, in, 4);
          return answer_attention_block(in[0], in[1],
                                        AttentionParams<double>::from(w, "decoder.layers.0.answer_attn"),
                                        in[2], in[3], 2, 1e-5, ForwardContext<double>{});
        },
        concat({random_normal({2, 3, 8}, 81), random_normal({2, 8}, 82),
                near_one({8}, 83), random_normal({8}, 84, 0.1)},
               jitter(p.tensors, 90)));
  });
  reg("cp_transform", [] {
    return grad_check("cp_transform",
                      [](const Inputs& in) {
                        return cp_transform(in[0], in[1], 3.0, std::span<const std::uint8_t>(valid_mask(2, 4)));
                      },
                      std::vector<Shape>{{2, 4, 5}, {2, 5}});
  });
  reg("full_model", full_model_check);
  return s;
}

std::vector<GradCheckReport> run_grad_suite(const std::string& filter) {
  std::vector<GradCheckReport> out;
  for (const auto& e : grad_suite()) {
    if (!filter.empty() && e.name != filter) continue;
    out.push_back(e.run());
  }
  return out;
}

std::string format_grad_reports(const std::vector<GradCheckReport>& reports) {
  std::ostringstream out;
  std::size_t failed = 0;
  char line[160];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-24s max_rel_error=%.3e tol=%.0e checked=%zu", r.op.c_str(),
                  r.max_rel_error, r.tolerance, r.checked);
    out << line;
    if (r.skipped) out << " skipped_at_relu_kinks=" << r.skipped;
    out << (r.passed ? "  ok\n" : "  FAILED\n");
    if (!r.passed) ++failed;
  }
  out << reports.size() - failed << "/" << reports.size() << " gradient checks passed\n";
  return out.str();
}

}  // namespace aqg
