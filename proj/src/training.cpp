#include "aqg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "aqg/errors.hpp"
#include "aqg/rng.hpp"

namespace aqg {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  if (steps > 0 && warmup >= steps) throw ConfigError("warmup must be < steps");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
}

double linear_lr(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.steps) {
    std::cerr << "warning: lr requested for step " << step << " past the schedule end "
              << cfg.steps << "; using 0\n";
    return 0.0;
  }
  const double base = cfg.lr;
  if (step < cfg.warmup) {
    return base * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  }
  const double span = static_cast<double>(cfg.steps - cfg.warmup);
  if (span <= 0.0) return 0.0;
  return base * static_cast<double>(cfg.steps - step) / span;
}

template <typename T>
double optimizer_step(Weights<T>& weights, AdamState<T>& state, double lr,
                      const TrainConfig& cfg) {
  double sq = 0.0;
  for (const auto& [name, w] : weights) {
    if (!w.has_grad()) continue;
    for (T g : w.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in tensor '" + name + "'");
      }
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, w] : weights) {
    if (!w.has_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(w.numel(), T(0));
    if (v.empty()) v.assign(w.numel(), T(0));
    auto data = w.mutable_data();
    auto grad = w.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]) * clip;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      data[i] = static_cast<T>(static_cast<double>(data[i]) - update);
    }
  }
  return norm * clip;
}

template double optimizer_step(Weights<float>&, AdamState<float>&, double, const TrainConfig&);
template double optimizer_step(Weights<double>&, AdamState<double>&, double, const TrainConfig&);

std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch_size,
                                       std::size_t dataset_size, std::uint64_t seed) {
  if (dataset_size == 0) throw DataError("cannot draw batches from an empty dataset");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t pos = step * batch_size + j;
    const std::size_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(seed, "shuffle", epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

double evaluate_loss(const Seq2SeqModel<float>& model, std::span<const RawExample> data,
                     const Vocabulary& vocab, const TextLimits& limits,
                     std::size_t batch_size) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    const auto group = data.subspan(i, std::min(batch_size, data.size() - i));
    const Batch batch = make_batch(group, model.config().conditioning, vocab, limits);
    const std::size_t count = static_cast<std::size_t>(
        std::count_if(batch.labels.begin(), batch.labels.end(), [](auto l) { return l >= 0; }));
    total += static_cast<double>(model.forward_loss(batch).item()) * static_cast<double>(count);
    tokens += count;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

TrainResult train(const TrainData& data, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const TrainOptions& options) {
  model_cfg.validate();
  train_cfg.validate();
  if (!data.vocab) throw ConfigError("train: vocabulary missing");
  if (data.train.empty()) throw DataError("train: empty training set");
  if (model_cfg.vocab_size < data.vocab->size()) {
    throw ConfigError("vocab_size " + std::to_string(model_cfg.vocab_size) +
                      " smaller than the vocabulary (" + std::to_string(data.vocab->size()) + ")");
  }

  TrainResult result;
  Seq2SeqModel<float> model = options.resume ? model_from_checkpoint(*options.resume)
                                             : Seq2SeqModel<float>(model_cfg, train_cfg.seed);
  AdamState<float> adam = options.resume ? options.resume->adam : AdamState<float>{};
  const std::size_t start = options.resume ? options.resume->step : 0;
  const std::size_t end =
      options.stop_after ? std::min(options.stop_after, train_cfg.steps) : train_cfg.steps;
  const auto& cond = model.config().conditioning;

  auto snapshot = [&](std::size_t step) {
    Checkpoint c;
    c.model = model.config();
    c.train = train_cfg;
    c.step = step;
    for (const auto& [name, w] : model.weights()) c.weights.emplace(name, w.detach());
    c.adam = adam;
    return c;
  };
  auto validation = [&]() {
    return evaluate_loss(model, data.dev, *data.vocab, data.limits, train_cfg.batch_size);
  };

  std::vector<RawExample> group;
  for (std::size_t step = start; step < end; ++step) {
    group.clear();
    for (auto i : batch_indices(step, train_cfg.batch_size, data.train.size(), train_cfg.seed)) {
      group.push_back(data.train[i]);
    }
    const Batch batch = make_batch(group, cond, *data.vocab, data.limits);
    std::mt19937_64 rng(derive_seed(train_cfg.seed, "dropout", step));
    ForwardContext<float> ctx;
    ctx.training = true;
    ctx.rng = &rng;
    for (auto& [name, w] : model.weights()) w.zero_grad();
    const Tensor<float> loss = model.forward_loss(batch, ctx);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite training loss at step " + std::to_string(step + 1));
    }
    loss.backward();
    const double lr = linear_lr(step, train_cfg);
    optimizer_step(model.weights(), adam, lr, train_cfg);

    LossRecord rec{step + 1, lr, value, std::nullopt};
    const bool last = step + 1 == end;
    if (!data.dev.empty() &&
        ((train_cfg.eval_interval && (step + 1) % train_cfg.eval_interval == 0) || last)) {
      rec.val_loss = validation();
    }
    result.log.push_back(rec);
    if (options.on_step) options.on_step(rec);
    if (!options.checkpoint_path.empty() && train_cfg.checkpoint_interval &&
        (step + 1) % train_cfg.checkpoint_interval == 0 && !last) {
      save_checkpoint(snapshot(step + 1), options.checkpoint_path);
    }
  }
  result.checkpoint = snapshot(std::max(start, end));
  if (!options.checkpoint_path.empty()) save_checkpoint(result.checkpoint, options.checkpoint_path);
  return result;
}

void write_loss_csv(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write loss log " + path.string());
  const bool any_val = std::any_of(log.begin(), log.end(),
                                   [](const LossRecord& r) { return r.val_loss.has_value(); });
  out << (any_val ? "step,lr,train_loss,val_loss\n" : "step,lr,train_loss\n");
  char buf[128];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g", r.step, r.lr, r.train_loss);
    out << buf;
    if (any_val) {
      out << ',';
      if (r.val_loss) {
        std::snprintf(buf, sizeof buf, "%.9g", *r.val_loss);
        out << buf;
      }
    }
    out << '\n';
  }
}

}  // namespace aqg
