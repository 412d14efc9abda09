#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "aqg/errors.hpp"
#include "aqg/training.hpp"

namespace aqg {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(value, &used);
    if (used == value.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected a non-negative integer)");
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected a number)");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ConfigError("invalid value for '" + key + "': '" + value + "' (expected true/false)");
}

}  // namespace

std::map<std::string, std::string> to_key_values(const ModelConfig& c) {
  return {
      {"d", std::to_string(c.d)},
      {"layers", std::to_string(c.layers)},
      {"heads", std::to_string(c.heads)},
      {"d_ff", std::to_string(c.d_ff)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"max_positions", std::to_string(c.max_positions)},
      {"dropout", format_double(c.dropout)},
      {"ln_eps", format_double(c.ln_eps)},
      {"mode", mode_label(c.conditioning)},
      {"k", format_double(c.conditioning.k)},
      {"ap_separator", c.conditioning.ap_separator ? "true" : "false"},
  };
}

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  return {
      {"steps", std::to_string(c.steps)},
      {"lr", format_double(c.lr)},
      {"batch_size", std::to_string(c.batch_size)},
      {"seed", std::to_string(c.seed)},
      {"warmup", std::to_string(c.warmup)},
      {"checkpoint_interval", std::to_string(c.checkpoint_interval)},
      {"eval_interval", std::to_string(c.eval_interval)},
      {"beta1", format_double(c.beta1)},
      {"beta2", format_double(c.beta2)},
      {"adam_eps", format_double(c.adam_eps)},
      {"clip_norm", format_double(c.clip_norm)},
  };
}

bool apply_key_value(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "d") c.d = parse_size(key, value);
  else if (key == "layers") c.layers = parse_size(key, value);
  else if (key == "heads") c.heads = parse_size(key, value);
  else if (key == "d_ff") c.d_ff = parse_size(key, value);
  else if (key == "vocab_size") c.vocab_size = parse_size(key, value);
  else if (key == "max_positions") c.max_positions = parse_size(key, value);
  else if (key == "dropout") c.dropout = parse_double(key, value);
  else if (key == "ln_eps") c.ln_eps = parse_double(key, value);
  else if (key == "k") c.conditioning.k = parse_double(key, value);
  else if (key == "ap_separator") c.conditioning.ap_separator = parse_bool(key, value);
  else if (key == "mode") {
    const bool labelled = value.find('+') != std::string::npos;
    ConditioningConfig parsed = labelled ? parse_mode_label(value, 1.0) : parse_mode(value, 1.0);
    c.conditioning.ap = parsed.ap;
    c.conditioning.rs = parsed.rs;
    c.conditioning.cp = parsed.cp;
    c.conditioning.aa = parsed.aa;
  } else {
    return false;
  }
  return true;
}

bool apply_key_value(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "steps") c.steps = parse_size(key, value);
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "batch_size" || key == "batch") c.batch_size = parse_size(key, value);
  else if (key == "seed") c.seed = parse_size(key, value);
  else if (key == "warmup") c.warmup = parse_size(key, value);
  else if (key == "checkpoint_interval") c.checkpoint_interval = parse_size(key, value);
  else if (key == "eval_interval") c.eval_interval = parse_size(key, value);
  else if (key == "beta1") c.beta1 = parse_double(key, value);
  else if (key == "beta2") c.beta2 = parse_double(key, value);
  else if (key == "adam_eps") c.adam_eps = parse_double(key, value);
  else if (key == "clip_norm") c.clip_norm = parse_double(key, value);
  else return false;
  return true;
}

// ---- binary format ---------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_tensor(std::string& out, const std::string& name, const Shape& shape,
                std::span<const float> data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
  }
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t start, std::string source)
      : buf_(buf), source_(std::move(source)), pos_(start) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw IntegrityError(source_ + ": truncated checkpoint");
  }
  const std::string& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string meta = "format_version=" + std::to_string(kCheckpointVersion) + "\n";
  meta += "step=" + std::to_string(ckpt.step) + "\n";
  meta += "adam_t=" + std::to_string(ckpt.adam.t) + "\n";
  for (const auto& [k, v] : to_key_values(ckpt.model)) meta += "model." + k + "=" + v + "\n";
  for (const auto& [k, v] : to_key_values(ckpt.train)) meta += "train." + k + "=" + v + "\n";

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  const std::size_t count = ckpt.weights.size() + ckpt.adam.m.size() + ckpt.adam.v.size();
  put_u32(out, static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : ckpt.weights) put_tensor(out, name, t.shape(), t.data());
  for (const auto& [name, m] : ckpt.adam.m) {
    put_tensor(out, "optim.m." + name, ckpt.weights.at(name).shape(), m);
  }
  for (const auto& [name, v] : ckpt.adam.v) {
    put_tensor(out, "optim.v." + name, ckpt.weights.at(name).shape(), v);
  }

  // Write-then-rename keeps the previous checkpoint intact on failure.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  const std::string source = path.string();
  if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw IntegrityError(source + ": not an AQG1 checkpoint (bad magic bytes)");
  }
  Reader in(buf, 4, source);
  const std::string meta = in.bytes(in.u32());

  Checkpoint ckpt;
  bool version_seen = false;
  std::istringstream lines(meta);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IntegrityError(source + ": malformed metadata line");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "format_version") {
      if (value != std::to_string(kCheckpointVersion)) {
        throw IntegrityError(source + ": unsupported checkpoint version " + value);
      }
      version_seen = true;
    } else if (key == "step") {
      ckpt.step = std::stoull(value);
    } else if (key == "adam_t") {
      ckpt.adam.t = std::stoull(value);
    } else if (key.rfind("model.", 0) == 0) {
      apply_key_value(ckpt.model, key.substr(6), value);
    } else if (key.rfind("train.", 0) == 0) {
      apply_key_value(ckpt.train, key.substr(6), value);
    }
  }
  if (!version_seen) throw IntegrityError(source + ": checkpoint version missing");

  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.bytes(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw IntegrityError(source + ": implausible rank for tensor '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = in.u32();
      n *= d;
    }
    if (n > buf.size()) throw IntegrityError(source + ": truncated checkpoint");
    std::vector<float> data(n);
    for (auto& v : data) v = in.f32();
    if (name.rfind("optim.m.", 0) == 0) {
      ckpt.adam.m[name.substr(8)] = std::move(data);
    } else if (name.rfind("optim.v.", 0) == 0) {
      ckpt.adam.v[name.substr(8)] = std::move(data);
    } else {
      try {
        ckpt.weights.emplace(name, Tensor<float>(shape, std::move(data), true));
      } catch (const DimensionError& e) {
        throw IntegrityError(source + ": tensor '" + name + "': " + e.what());
      }
    }
  }
  if (!in.done()) throw IntegrityError(source + ": trailing bytes after tensor table");
  return ckpt;
}

Seq2SeqModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  // Deep copy: training mutates weights in place.
  Weights<float> copy;
  for (const auto& [name, t] : ckpt.weights) copy.emplace(name, t.detach());
  return Seq2SeqModel<float>(ckpt.model, std::move(copy));
}

}  // namespace aqg
