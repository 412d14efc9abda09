#include "aqg/model.hpp"

#include <cmath>

#include "aqg/errors.hpp"
#include "aqg/rng.hpp"

namespace aqg {

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (d == 0 || d % heads != 0) {
    throw ConfigError("d (" + std::to_string(d) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (d_ff == 0) throw ConfigError("d_ff must be > 0");
  if (vocab_size <= kNumSpecialTokens) throw ConfigError("vocab_size must be > 5");
  if (max_positions == 0) throw ConfigError("max_positions must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be > 0");
  conditioning.validate();
}

// ---- building blocks -------------------------------------------------------

template <typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const Tensor<T>* mask) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2 || q.dim(-1) != k.dim(-1) ||
      k.dim(-2) != v.dim(-2)) {
    throw DimensionError("attention: inconsistent Q " + shape_str(q.shape()) + ", K " +
                         shape_str(k.shape()) + ", V " + shape_str(v.shape()));
  }
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(q.dim(-1)));
  Tensor<T> scores = scale(matmul(q, transpose(k, -1, -2)), inv_sqrt);
  if (mask) scores = add(scores, *mask);
  Tensor<T> weights = softmax(scores, -1);
  return {matmul(weights, v), weights};
}

template <typename T>
Tensor<T> key_padding_mask(std::span<const std::uint8_t> valid, std::size_t batch,
                           std::size_t length) {
  if (valid.size() != batch * length) {
    throw DimensionError("key_padding_mask: " + std::to_string(valid.size()) +
                         " flags for " + std::to_string(batch) + "x" + std::to_string(length));
  }
  std::vector<T> data(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    data[i] = valid[i] ? T(0) : static_cast<T>(kMaskedLogit);
  }
  return Tensor<T>({batch, 1, 1, length}, std::move(data));
}

template <typename T>
Tensor<T> causal_mask(std::size_t length) {
  std::vector<T> data(length * length, T(0));
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = i + 1; j < length; ++j) {
      data[i * length + j] = static_cast<T>(kMaskedLogit);
    }
  }
  return Tensor<T>({1, 1, length, length}, std::move(data));
}

namespace {

template <typename T>
const Tensor<T>& param(const Weights<T>& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const Weights<T>& w, const std::string& prefix,
               const ModelConfig& cfg) {
  return layer_norm(x, param(w, prefix + ".gain"), param(w, prefix + ".bias"),
                    static_cast<T>(cfg.ln_eps));
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx) {
  if (!ctx.training || !ctx.rng || cfg.dropout <= 0.0) return x;
  return dropout(x, static_cast<T>(cfg.dropout), *ctx.rng);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const Weights<T>& w, const std::string& prefix,
                       const ModelConfig& cfg, const ForwardContext<T>& ctx) {
  Tensor<T> h = relu(linear(x, param(w, prefix + ".fc1.weight"), param(w, prefix + ".fc1.bias")));
  h = maybe_dropout(h, cfg, ctx);
  return linear(h, param(w, prefix + ".fc2.weight"), param(w, prefix + ".fc2.bias"));
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void add_attention_shapes(std::map<std::string, Shape>& out, const std::string& prefix,
                          std::size_t d) {
  for (const char* p : {"q", "k", "v", "o"}) {
    out[prefix + "." + p + ".weight"] = {d, d};
    out[prefix + "." + p + ".bias"] = {d};
  }
}

void add_norm_shapes(std::map<std::string, Shape>& out, const std::string& prefix,
                     std::size_t d) {
  out[prefix + ".gain"] = {d};
  out[prefix + ".bias"] = {d};
}

void add_ffn_shapes(std::map<std::string, Shape>& out, const std::string& prefix,
                    std::size_t d, std::size_t d_ff) {
  out[prefix + ".fc1.weight"] = {d, d_ff};
  out[prefix + ".fc1.bias"] = {d_ff};
  out[prefix + ".fc2.weight"] = {d_ff, d};
  out[prefix + ".fc2.bias"] = {d};
}

}  // namespace

template <typename T>
AttentionParams<T> AttentionParams<T>::from(const Weights<T>& w, const std::string& prefix) {
  return {param(w, prefix + ".q.weight"), param(w, prefix + ".q.bias"),
          param(w, prefix + ".k.weight"), param(w, prefix + ".k.bias"),
          param(w, prefix + ".v.weight"), param(w, prefix + ".v.bias"),
          param(w, prefix + ".o.weight"), param(w, prefix + ".o.bias")};
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x_q, const Tensor<T>& x_kv,
                               const AttentionParams<T>& p, std::size_t heads,
                               const Tensor<T>* mask, const ForwardContext<T>& ctx,
                               std::string_view site) {
  if (x_q.rank() != 3 || x_kv.rank() != 3 || x_q.dim(2) != x_kv.dim(2)) {
    throw DimensionError("multi_head_attention: expected [B, m, d] and [B, s, d], got " +
                         shape_str(x_q.shape()) + " and " + shape_str(x_kv.shape()));
  }
  const std::size_t d = x_q.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("multi_head_attention: d=" + std::to_string(d) +
                         " not divisible by heads=" + std::to_string(heads));
  }
  const std::size_t dk = d / heads;
  auto split = [&](const Tensor<T>& x) {
    return permute(reshape(x, {x.dim(0), x.dim(1), heads, dk}), {0, 2, 1, 3});
  };
  const Tensor<T> q = split(linear(x_q, p.wq, p.bq));
  const Tensor<T> k = split(linear(x_kv, p.wk, p.bk));
  const Tensor<T> v = split(linear(x_kv, p.wv, p.bv));
  auto result = attention(q, k, v, mask);
  if (ctx.on_attention) ctx.on_attention(site, result.weights);
  const std::size_t batch = result.output.dim(0);
  Tensor<T> merged =
      reshape(permute(result.output, {0, 2, 1, 3}), {batch, x_q.dim(1), d});
  return linear(merged, p.wo, p.bo);
}

template <typename T>
Tensor<T> cp_transform(const Tensor<T>& states, const Tensor<T>& answer, T k,
                       std::span<const std::uint8_t> valid, Tensor<T>* weights_out) {
  if (states.rank() != 3 || answer.rank() != 2 || answer.dim(1) != states.dim(2) ||
      (answer.dim(0) != states.dim(0) && answer.dim(0) != 1)) {
    throw DimensionError("cp_transform: states " + shape_str(states.shape()) +
                         " incompatible with answer " + shape_str(answer.shape()));
  }
  const std::size_t batch = states.dim(0);
  const std::size_t n = states.dim(1);
  const std::size_t d = states.dim(2);
  Tensor<T> scores = reshape(matmul(states, reshape(answer, {answer.dim(0), d, 1})), {batch, n});
  if (!valid.empty()) {
    if (valid.size() != batch * n) {
      throw DimensionError("cp_transform: validity mask size mismatch");
    }
    std::vector<T> m(valid.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = valid[i] ? T(0) : static_cast<T>(kMaskedLogit);
    scores = add(scores, Tensor<T>({batch, n}, std::move(m)));
  }
  Tensor<T> p = softmax(scores, -1);
  if (weights_out) *weights_out = p;
  return scale(mul(states, reshape(p, {batch, n, 1})), k);
}

template <typename T>
Tensor<T> answer_attention_block(const Tensor<T>& hidden, const Tensor<T>& answer,
                                 const AttentionParams<T>& p, const Tensor<T>& ln_gain,
                                 const Tensor<T>& ln_bias, std::size_t heads, T eps,
                                 const ForwardContext<T>& ctx) {
  if (answer.rank() != 2) {
    throw DimensionError("answer_attention_block: answer must be [B, d], got " +
                         shape_str(answer.shape()));
  }
  const Tensor<T> key = reshape(answer, {answer.dim(0), 1, answer.dim(1)});
  const Tensor<T> context = multi_head_attention<T>(hidden, key, p, heads, nullptr, ctx,
                                                 "answer_attention");
  if (ctx.on_answer_context) ctx.on_answer_context(context);
  return layer_norm(add(hidden, context), ln_gain, ln_bias, eps);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& x, const Tensor<T>* mask, const Weights<T>& w,
                        const std::string& prefix, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx) {
  Tensor<T> h = norm(x, w, prefix + ".ln1", cfg);
  Tensor<T> a = multi_head_attention(h, h, AttentionParams<T>::from(w, prefix + ".self_attn"),
                                     cfg.heads, mask, ctx, "encoder.self");
  Tensor<T> out = add(x, maybe_dropout(a, cfg, ctx));
  h = norm(out, w, prefix + ".ln2", cfg);
  return add(out, maybe_dropout(feed_forward(h, w, prefix + ".ffn", cfg, ctx), cfg, ctx));
}

template <typename T>
Tensor<T> decoder_layer(const Tensor<T>& x, const Tensor<T>& memory,
                        const Tensor<T>* self_mask, const Tensor<T>* memory_mask,
                        const Tensor<T>* answer, const Weights<T>& w,
                        const std::string& prefix, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx) {
  Tensor<T> h = norm(x, w, prefix + ".ln1", cfg);
  Tensor<T> a = multi_head_attention(h, h, AttentionParams<T>::from(w, prefix + ".self_attn"),
                                     cfg.heads, self_mask, ctx, "decoder.self");
  Tensor<T> out = add(x, maybe_dropout(a, cfg, ctx));
  h = norm(out, w, prefix + ".ln2", cfg);
  a = multi_head_attention(h, memory, AttentionParams<T>::from(w, prefix + ".cross_attn"),
                           cfg.heads, memory_mask, ctx, "decoder.cross");
  out = add(out, maybe_dropout(a, cfg, ctx));
  if (answer) {
    out = answer_attention_block(out, *answer,
                                 AttentionParams<T>::from(w, prefix + ".answer_attn"),
                                 param(w, prefix + ".ln_answer.gain"),
                                 param(w, prefix + ".ln_answer.bias"), cfg.heads,
                                 static_cast<T>(cfg.ln_eps), ctx);
  }
  h = norm(out, w, prefix + ".ln3", cfg);
  return add(out, maybe_dropout(feed_forward(h, w, prefix + ".ffn", cfg, ctx), cfg, ctx));
}

// ---- model -----------------------------------------------------------------

template <typename T>
std::map<std::string, Shape> Seq2SeqModel<T>::parameter_shapes(const ModelConfig& cfg) {
  std::map<std::string, Shape> out;
  const std::size_t d = cfg.d;
  out["embed.tokens"] = {cfg.vocab_size, d};
  out["encoder.positions"] = {cfg.max_positions, d};
  out["decoder.positions"] = {cfg.max_positions, d};
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string e = "encoder.layers." + std::to_string(i);
    add_attention_shapes(out, e + ".self_attn", d);
    add_norm_shapes(out, e + ".ln1", d);
    add_norm_shapes(out, e + ".ln2", d);
    add_ffn_shapes(out, e + ".ffn", d, cfg.d_ff);
    const std::string dec = "decoder.layers." + std::to_string(i);
    add_attention_shapes(out, dec + ".self_attn", d);
    add_attention_shapes(out, dec + ".cross_attn", d);
    add_norm_shapes(out, dec + ".ln1", d);
    add_norm_shapes(out, dec + ".ln2", d);
    add_norm_shapes(out, dec + ".ln3", d);
    add_ffn_shapes(out, dec + ".ffn", d, cfg.d_ff);
    if (cfg.conditioning.aa) {
      add_attention_shapes(out, dec + ".answer_attn", d);
      add_norm_shapes(out, dec + ".ln_answer", d);
    }
  }
  add_norm_shapes(out, "encoder.ln_final", d);
  add_norm_shapes(out, "decoder.ln_final", d);
  return out;
}

template <typename T>
Weights<T> Seq2SeqModel<T>::init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Weights<T> out;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    std::mt19937_64 rng(derive_seed(seed, name));
    std::vector<T> data(shape_numel(shape), T(0));
    if (ends_with(name, ".gain")) {
      std::fill(data.begin(), data.end(), T(1));
    } else if (ends_with(name, ".weight")) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : data) v = static_cast<T>(dist(rng));
    } else if (name == "embed.tokens" || ends_with(name, ".positions")) {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
      for (auto& v : data) v = static_cast<T>(dist(rng));
    }
    out.emplace(name, Tensor<T>(shape, std::move(data), true));
  }
  return out;
}

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), weights_(init_weights(config_, seed)) {}

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(ModelConfig config, Weights<T> weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  for (const auto& [name, shape] : parameter_shapes(config_)) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw ConfigError("missing parameter tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw DimensionError("parameter tensor '" + name + "' has shape " +
                           shape_str(it->second.shape()) + ", expected " + shape_str(shape));
    }
    it->second.set_requires_grad(true);
  }
}

template <typename T>
void Seq2SeqModel<T>::set_conditioning(const ConditioningConfig& c) {
  c.validate();
  if (c.aa && !weights_.count("decoder.layers.0.answer_attn.q.weight")) {
    throw ConfigError("answer attention requested but the model has no AA weights");
  }
  config_.conditioning = c;
}

template <typename T>
std::size_t Seq2SeqModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights_) n += t.numel();
  return n;
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::embed(const IdBatch& ids, const std::string& positions,
                                 const ForwardContext<T>& ctx) const {
  if (ids.cols > config_.max_positions) {
    throw DataError("sequence length " + std::to_string(ids.cols) + " exceeds max positions " +
                    std::to_string(config_.max_positions));
  }
  Tensor<T> tok = embedding(param(weights_, "embed.tokens"), std::span(ids.ids),
                            Shape{ids.rows, ids.cols});
  std::vector<std::int32_t> pos(ids.cols);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i);
  Tensor<T> p = embedding(param(weights_, positions), std::span(pos), Shape{ids.cols});
  return maybe_dropout(add(tok, p), config_, ctx);
}

template <typename T>
EncoderOutput<T> Seq2SeqModel<T>::encode(const IdBatch& source,
                                         const ForwardContext<T>& ctx) const {
  Tensor<T> x = embed(source, "encoder.positions", ctx);
  const Tensor<T> mask = key_padding_mask<T>(source.mask, source.rows, source.cols);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    x = encoder_layer(x, &mask, weights_, "encoder.layers." + std::to_string(i), config_, ctx);
  }
  EncoderOutput<T> out;
  out.states = norm(x, weights_, "encoder.ln_final", config_);
  out.valid = source.mask;
  out.batch = source.rows;
  out.length = source.cols;
  return out;
}

template <typename T>
AnswerEmbedding<T> Seq2SeqModel<T>::answer_embedding(const IdBatch& answer,
                                                     const ForwardContext<T>& ctx) const {
  std::vector<T> pool(answer.rows * answer.cols, T(0));
  for (std::size_t r = 0; r < answer.rows; ++r) {
    const std::size_t count = answer.length(r);
    if (count == 0) {
      throw DegenerateInputError("answer_embedding: empty answer in batch row " +
                                 std::to_string(r));
    }
    for (std::size_t c = 0; c < answer.cols; ++c) {
      if (answer.mask[r * answer.cols + c]) {
        pool[r * answer.cols + c] = T(1) / static_cast<T>(count);
      }
    }
  }
  const EncoderOutput<T> enc = encode(answer, ctx);
  const Tensor<T> weights({answer.rows, 1, answer.cols}, std::move(pool));
  return {reshape(matmul(weights, enc.states), {answer.rows, config_.d})};
}

template <typename T>
EncoderOutput<T> Seq2SeqModel<T>::prepare_source(const IdBatch& source, const IdBatch& answer,
                                                 AnswerEmbedding<T>* answer_out,
                                                 const ForwardContext<T>& ctx) const {
  EncoderOutput<T> enc = encode(source, ctx);
  const auto& cond = config_.conditioning;
  if (!cond.needs_answer_embedding()) return enc;
  AnswerEmbedding<T> ea = answer_embedding(answer, ctx);
  if (cond.cp) {
    enc.states = cp_transform(enc.states, ea.pooled, static_cast<T>(cond.k),
                              std::span<const std::uint8_t>(enc.valid));
    enc.cp_applied = true;
  }
  if (answer_out) *answer_out = std::move(ea);
  return enc;
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::decode(const IdBatch& decoder_input, const EncoderOutput<T>& enc,
                                  const AnswerEmbedding<T>* answer,
                                  const ForwardContext<T>& ctx) const {
  const auto& cond = config_.conditioning;
  if (cond.aa && (!answer || !answer->pooled.defined())) {
    throw ConfigError("decode: answer attention is active but no answer embedding was given");
  }
  if (cond.cp && !enc.cp_applied) {
    throw ConfigError("decode: custom product is active but encoder states were not transformed");
  }
  Tensor<T> x = embed(decoder_input, "decoder.positions", ctx);
  const Tensor<T> self_mask = causal_mask<T>(decoder_input.cols);
  const Tensor<T> memory_mask = key_padding_mask<T>(enc.valid, enc.batch, enc.length);
  const Tensor<T>* pooled = cond.aa ? &answer->pooled : nullptr;
  for (std::size_t i = 0; i < config_.layers; ++i) {
    x = decoder_layer(x, enc.states, &self_mask, &memory_mask, pooled, weights_,
                      "decoder.layers." + std::to_string(i), config_, ctx);
  }
  x = norm(x, weights_, "decoder.ln_final", config_);
  return matmul(x, transpose(param(weights_, "embed.tokens"), 0, 1));
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::forward_loss(const Batch& batch, const ForwardContext<T>& ctx) const {
  AnswerEmbedding<T> ea;
  const EncoderOutput<T> enc = prepare_source(batch.source, batch.answer, &ea, ctx);
  const Tensor<T> logits = decode(batch.decoder_input, enc, &ea, ctx);
  return cross_entropy(logits, std::span<const std::int32_t>(batch.labels), -1);
}

#define AQG_INSTANTIATE(T)                                                                  \
  template struct AttentionParams<T>;                                                       \
  template class Seq2SeqModel<T>;                                                           \
  template AttentionResult<T> attention(const Tensor<T>&, const Tensor<T>&,                 \
                                        const Tensor<T>&, const Tensor<T>*);                \
  template Tensor<T> key_padding_mask<T>(std::span<const std::uint8_t>, std::size_t,        \
                                         std::size_t);                                      \
  template Tensor<T> causal_mask<T>(std::size_t);                                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&,               \
                                          const AttentionParams<T>&, std::size_t,           \
                                          const Tensor<T>*, const ForwardContext<T>&,       \
                                          std::string_view);                                \
  template Tensor<T> cp_transform(const Tensor<T>&, const Tensor<T>&, T,                    \
                                  std::span<const std::uint8_t>, Tensor<T>*);               \
  template Tensor<T> answer_attention_block(const Tensor<T>&, const Tensor<T>&,             \
                                            const AttentionParams<T>&, const Tensor<T>&,    \
                                            const Tensor<T>&, std::size_t, T,               \
                                            const ForwardContext<T>&);                      \
  template Tensor<T> encoder_layer(const Tensor<T>&, const Tensor<T>*, const Weights<T>&,   \
                                   const std::string&, const ModelConfig&,                  \
                                   const ForwardContext<T>&);                               \
  template Tensor<T> decoder_layer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,    \
                                   const Tensor<T>*, const Tensor<T>*, const Weights<T>&,   \
                                   const std::string&, const ModelConfig&,                  \
                                   const ForwardContext<T>&);

AQG_INSTANTIATE(float)
AQG_INSTANTIATE(double)

#undef AQG_INSTANTIATE

}  // namespace aqg
