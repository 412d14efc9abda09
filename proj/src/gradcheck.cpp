#include "aqg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string_view>
#include <unordered_set>

namespace aqg {

DoubleTensor random_normal(const Shape& shape, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return DoubleTensor(shape, std::move(data));
}

namespace {

DoubleTensor reduce_to_scalar(const DoubleTensor& out, const DoubleTensor& weights) {
  if (out.numel() == 1 && out.rank() == 0) return out;
  return sum(mul(out, weights));
}

// Sign of every ReLU input in the graph below `out`, in a fixed traversal
// order.
std::vector<bool> relu_signature(const DoubleTensor& out) {
  std::vector<bool> sig;
  std::vector<const detail::Node<double>*> stack{out.node().get()};
  std::unordered_set<const detail::Node<double>*> seen;
  while (!stack.empty()) {
    const auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (std::string_view(n->op) == "relu") {
      for (double v : n->parents.at(0)->data) sig.push_back(v > 0.0);
    }
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  return sig;
}

}  // namespace

GradCheckReport grad_check(const std::string& op, const GradCheckFn& fn,
                           std::vector<DoubleTensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in = in.detach();
    in.set_requires_grad(true);
  }
  DoubleTensor probe;
  {
    NoGradGuard guard;
    probe = fn(inputs);
  }
  const DoubleTensor weights = random_normal(probe.shape(), options.seed ^ 0x9e3779b97f4a7c15ULL);
  auto objective = [&]() { return reduce_to_scalar(fn(inputs), weights); };

  const DoubleTensor base = objective();
  base.backward();
  const std::vector<bool> base_sig =
      options.skip_relu_crossings ? relu_signature(base) : std::vector<bool>{};

  GradCheckReport report;
  report.op = op;
  report.epsilon = options.epsilon;
  report.tolerance = options.tolerance;
  std::mt19937_64 pick(options.seed);
  for (auto& in : inputs) {
    std::vector<std::size_t> idx(in.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_elements_per_input && idx.size() > options.max_elements_per_input) {
      std::shuffle(idx.begin(), idx.end(), pick);
      idx.resize(options.max_elements_per_input);
      std::sort(idx.begin(), idx.end());
    }
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto values = in.mutable_data();
    for (auto i : idx) {
      const double saved = values[i];
      double plus, minus;
      bool crossed = false;
      if (options.skip_relu_crossings) {
        values[i] = saved + options.epsilon;
        const DoubleTensor p = objective();
        values[i] = saved - options.epsilon;
        const DoubleTensor m = objective();
        plus = p.item();
        minus = m.item();
        crossed = relu_signature(p) != base_sig || relu_signature(m) != base_sig;
      } else {
        NoGradGuard guard;
        values[i] = saved + options.epsilon;
        plus = objective().item();
        values[i] = saved - options.epsilon;
        minus = objective().item();
      }
      values[i] = saved;
      if (crossed) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.scale_floor});
      const double err = std::abs(a - numeric) / denom;
      if (std::isnan(report.max_rel_error)) continue;
      if (std::isnan(err) || err > report.max_rel_error) report.max_rel_error = err;
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const std::string& op, const GradCheckFn& fn,
                           const std::vector<Shape>& shapes,
                           const GradCheckOptions& options) {
  std::vector<DoubleTensor> inputs;
  std::uint64_t seed = options.seed * 1000003ULL + 17;
  for (const auto& s : shapes) inputs.push_back(random_normal(s, seed++));
  return grad_check(op, fn, std::move(inputs), options);
}

}  // namespace aqg
