#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aqg/model.hpp"
#include "aqg/text.hpp"

namespace aqg {

struct TrainConfig {
  std::size_t steps = 2000;
  double lr = 3e-4;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1234;
  std::size_t warmup = 0;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::size_t eval_interval = 0;        // 0: validation at the end only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Linear warmup from 0 over `warmup` steps, then linear decay from the base
// rate to 0 at `steps`. Steps past the end are clamped to 0 with a warning.
double linear_lr(std::size_t step, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
  std::size_t t = 0;
};

// Clips the global gradient norm, then applies one bias-corrected Adam update
// to every weight that has a gradient. Throws NumericError naming the first
// tensor with a non-finite gradient, before touching any weight. Returns the
// gradient norm after clipping.
template <typename T>
double optimizer_step(Weights<T>& weights, AdamState<T>& state, double lr,
                      const TrainConfig& cfg);

// ---- checkpoints -----------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'A', 'Q', 'G', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t step = 0;
  Weights<float> weights;
  AdamState<float> adam;
};

// Layout: "AQG1", u32 metadata length, metadata (key=value lines), u32
// tensor count, then per tensor: u32 name length, name, u32 rank, u32 dims,
// little-endian f32 data. Optimizer moments are stored as tensors named
// "optim.m.<param>" / "optim.v.<param>".
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Builds a model from a checkpoint, or from its weights under a different
// config (shape mismatches are reported by tensor name).
Seq2SeqModel<float> model_from_checkpoint(const Checkpoint& ckpt);

// key=value serialization shared by checkpoint metadata and run configs.
std::map<std::string, std::string> to_key_values(const ModelConfig& cfg);
std::map<std::string, std::string> to_key_values(const TrainConfig& cfg);
// Returns false when the key does not belong to the struct; throws
// ConfigError naming the key for unparsable values.
bool apply_key_value(ModelConfig& cfg, const std::string& key, const std::string& value);
bool apply_key_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string format_double(double v);

// ---- training loop ---------------------------------------------------------

struct LossRecord {
  std::size_t step = 0;  // 1-based count of updates applied
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainData {
  std::span<const RawExample> train;
  std::span<const RawExample> dev;
  const Vocabulary* vocab = nullptr;
  TextLimits limits;
};

struct TrainOptions {
  // Written every checkpoint_interval steps and at the end when non-empty.
  std::filesystem::path checkpoint_path;
  // Continue from this state instead of initializing.
  const Checkpoint* resume = nullptr;
  // Stop after this many total steps (for resume tests); 0 = cfg.steps.
  std::size_t stop_after = 0;
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;
};

// Example indices for one step: a window over the concatenation of per-epoch
// permutations, so batch order depends only on (seed, step).
std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch_size,
                                       std::size_t dataset_size, std::uint64_t seed);

// Token-weighted mean loss over a dataset with dropout off.
double evaluate_loss(const Seq2SeqModel<float>& model, std::span<const RawExample> data,
                     const Vocabulary& vocab, const TextLimits& limits,
                     std::size_t batch_size);

TrainResult train(const TrainData& data, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const TrainOptions& options = {});

void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path);

}  // namespace aqg
