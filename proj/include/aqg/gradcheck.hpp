#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aqg/tensor.hpp"

namespace aqg {

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  double epsilon = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation flipped a ReLU input's sign
  bool passed = false;
};

using GradCheckFn =
    std::function<DoubleTensor(const std::vector<DoubleTensor>& inputs)>;

struct GradCheckOptions {
  double tolerance = 1e-4;
  double epsilon = 1e-3;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  // Below the floor the comparison is effectively absolute.
  double scale_floor = 1e-2;
  // 0 checks every element; otherwise at most this many per input, chosen
  // deterministically from the seed.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 7;
  // Skip elements whose +/- epsilon evaluations change the sign of any ReLU
  // input: the difference quotient then spans a kink and says nothing about
  // the derivative at the point.
  bool skip_relu_crossings = false;
};

// Compares analytic gradients of `fn` against central differences at
// `inputs`. A non-scalar output is reduced to sum(out * R) for a fixed random
// R. Every input is treated as a differentiation variable.
GradCheckReport grad_check(const std::string& op, const GradCheckFn& fn,
                           std::vector<DoubleTensor> inputs,
                           const GradCheckOptions& options = {});

// Convenience overload that draws standard-normal inputs of the given shapes.
GradCheckReport grad_check(const std::string& op, const GradCheckFn& fn,
                           const std::vector<Shape>& shapes,
                           const GradCheckOptions& options = {});

DoubleTensor random_normal(const Shape& shape, std::uint64_t seed,
                           double stddev = 1.0);

}  // namespace aqg
