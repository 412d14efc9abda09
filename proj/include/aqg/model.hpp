#pragma once

// Encoder-decoder transformer with answer conditioning.
//
// Layers are pre-norm: x = x + Sublayer(LayerNorm(x)), with a final layer
// norm on each stack. The answer-attention (AA) block sits after cross
// attention in every decoder layer and is post-norm: H = LN(H + MHA(H, E_a)).
// The custom-product (CP) transform rescales encoder states before they reach
// cross attention.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "aqg/conditioning.hpp"
#include "aqg/tensor.hpp"
#include "aqg/text.hpp"

namespace aqg {

struct ModelConfig {
  std::size_t d = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 8000;
  std::size_t max_positions = 512;
  double dropout = 0.1;
  double ln_eps = 1e-5;
  ConditioningConfig conditioning;

  std::size_t head_dim() const { return d / heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Masked logits get this additive value before softmax.
inline constexpr double kMaskedLogit = -1e9;

template <typename T>
using Weights = std::map<std::string, Tensor<T>>;

// Per-call forward settings. Dropout is active only when `training` is set
// and an rng is supplied. The observers are verification probes.
template <typename T>
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  // Called with every post-softmax attention weight tensor [.., m, s].
  std::function<void(std::string_view site, const Tensor<T>& weights)> on_attention;
  // Called with the AA block's pre-residual context [B, m, d].
  std::function<void(const Tensor<T>& context)> on_answer_context;
};

template <typename T>
struct AttentionResult {
  Tensor<T> output;
  Tensor<T> weights;
};

// softmax(Q K^T / sqrt(d_k) + mask) V. The optional additive mask holds 0 or
// kMaskedLogit and broadcasts to [.., m, s].
template <typename T>
AttentionResult<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                             const Tensor<T>* mask = nullptr);

// Additive key-padding mask [B, 1, 1, n] from a 0/1 validity mask.
template <typename T>
Tensor<T> key_padding_mask(std::span<const std::uint8_t> valid, std::size_t batch,
                           std::size_t length);
// Additive causal mask [1, 1, m, m].
template <typename T>
Tensor<T> causal_mask(std::size_t length);

// Projections of one attention block, looked up as
// <prefix>.{q,k,v,o}.{weight,bias}.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  static AttentionParams from(const Weights<T>& w, const std::string& prefix);
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// x_q [B, m, d], x_kv [B', s, d] (B' broadcastable to B).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x_q, const Tensor<T>& x_kv,
                               const AttentionParams<T>& p, std::size_t heads,
                               const Tensor<T>* mask, const ForwardContext<T>& ctx,
                               std::string_view site = "attention");

// E_o [B, n, d], E_a [B, d]. Row i of the result is k * p_i * E_o[i] with
// p = softmax over valid positions of E_o . E_a.
template <typename T>
Tensor<T> cp_transform(const Tensor<T>& states, const Tensor<T>& answer, T k,
                       std::span<const std::uint8_t> valid = {},
                       Tensor<T>* weights_out = nullptr);

// LN(H + MHA(H, E_a)) with the single answer position as key and value.
template <typename T>
Tensor<T> answer_attention_block(const Tensor<T>& hidden, const Tensor<T>& answer,
                                 const AttentionParams<T>& p, const Tensor<T>& ln_gain,
                                 const Tensor<T>& ln_bias, std::size_t heads, T eps,
                                 const ForwardContext<T>& ctx);

// Single layers, parameters under `prefix` (e.g. "encoder.layers.0").
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& x, const Tensor<T>* mask, const Weights<T>& w,
                        const std::string& prefix, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx);
template <typename T>
Tensor<T> decoder_layer(const Tensor<T>& x, const Tensor<T>& memory,
                        const Tensor<T>* self_mask, const Tensor<T>* memory_mask,
                        const Tensor<T>* answer, const Weights<T>& w,
                        const std::string& prefix, const ModelConfig& cfg,
                        const ForwardContext<T>& ctx);

template <typename T>
struct EncoderOutput {
  Tensor<T> states;                 // [B, n, d]
  std::vector<std::uint8_t> valid;  // [B * n]
  std::size_t batch = 0;
  std::size_t length = 0;
  bool cp_applied = false;
};

template <typename T>
struct AnswerEmbedding {
  Tensor<T> pooled;  // [B, d]
};

template <typename T>
class Seq2SeqModel {
 public:
  // Random initialization; each tensor is seeded from (seed, name).
  Seq2SeqModel(ModelConfig config, std::uint64_t seed);
  // Adopts existing weights, checking every expected name and shape.
  Seq2SeqModel(ModelConfig config, Weights<T> weights);

  static Weights<T> init_weights(const ModelConfig& config, std::uint64_t seed);
  // Expected parameter names and shapes for a config.
  static std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  // Switches conditioning; AA needs its weights to be present.
  void set_conditioning(const ConditioningConfig& c);

  const Weights<T>& weights() const { return weights_; }
  Weights<T>& weights() { return weights_; }
  std::size_t parameter_count() const;

  EncoderOutput<T> encode(const IdBatch& source, const ForwardContext<T>& ctx = {}) const;
  AnswerEmbedding<T> answer_embedding(const IdBatch& answer,
                                      const ForwardContext<T>& ctx = {}) const;
  // Encodes the source and applies CP when active. Fills `answer_out` when
  // the conditioning needs an answer embedding.
  EncoderOutput<T> prepare_source(const IdBatch& source, const IdBatch& answer,
                                  AnswerEmbedding<T>* answer_out,
                                  const ForwardContext<T>& ctx = {}) const;
  // Logits [B, m, vocab].
  Tensor<T> decode(const IdBatch& decoder_input, const EncoderOutput<T>& enc,
                   const AnswerEmbedding<T>* answer, const ForwardContext<T>& ctx = {}) const;
  Tensor<T> forward_loss(const Batch& batch, const ForwardContext<T>& ctx = {}) const;

  template <typename U>
  Seq2SeqModel<U> cast() const {
    Weights<U> out;
    for (const auto& [name, t] : weights_) {
      std::vector<U> data(t.data().begin(), t.data().end());
      out.emplace(name, Tensor<U>(t.shape(), std::move(data), true));
    }
    return Seq2SeqModel<U>(config_, std::move(out));
  }

 private:
  Tensor<T> embed(const IdBatch& ids, const std::string& positions,
                  const ForwardContext<T>& ctx) const;

  ModelConfig config_;
  Weights<T> weights_;
};

}  // namespace aqg
