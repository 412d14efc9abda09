#include <cmath>
#include <random>

#include "doctest.h"

#include "aqg/errors.hpp"
#include "aqg/gradcheck.hpp"
#include "aqg/tensor.hpp"

using namespace aqg;

namespace {

std::vector<double> naive_matmul(const DoubleTensor& a, const DoubleTensor& b) {
  const std::size_t m = a.dim(0), q = a.dim(1), r = b.dim(1);
  std::vector<double> out(m * r, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < q; ++k) out[i * r + j] += a.data()[i * q + k] * b.data()[k * r + j];
  return out;
}

}  // namespace

TEST_CASE("matmul identity cases") {
  DoubleTensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto m = random_normal({3, 4}, 5);
  auto r = matmul(eye, m);
  CHECK(r.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < m.numel(); ++i) CHECK(r.data()[i] == m.data()[i]);

  FloatTensor a({2, 2}, {1, 2, 3, 4});
  FloatTensor i2({2, 2}, {1, 0, 0, 1});
  auto p = matmul(a, i2);
  CHECK(std::vector<float>(p.data().begin(), p.data().end()) == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("matmul against triple loop") {
  for (auto [m, q, r] : {std::tuple{4, 5, 3}, std::tuple{8, 8, 8}}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto a = random_normal({std::size_t(m), std::size_t(q)}, seed);
      auto b = random_normal({std::size_t(q), std::size_t(r)}, seed + 100);
      auto ref = naive_matmul(a, b);
      auto got = matmul(a, b);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got.data()[i] - ref[i]) < 1e-6);
    }
  }
}

TEST_CASE("batched matmul broadcasts") {
  auto a = random_normal({2, 3, 4}, 1);
  auto b = random_normal({4, 2}, 2);
  auto got = matmul(a, b);
  REQUIRE(got.shape() == Shape{2, 3, 2});
  for (std::size_t n = 0; n < 2; ++n) {
    DoubleTensor slice({3, 4}, std::vector<double>(a.data().begin() + n * 12, a.data().begin() + (n + 1) * 12));
    auto ref = naive_matmul(slice, b);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(got.data()[n * 6 + i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = DoubleTensor::zeros({2, 3});
  auto b = DoubleTensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  DoubleTensor c({3}, {2.5, 2.5, 2.5});
  auto s = softmax(c, 0);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  DoubleTensor x({2}, {0.0, std::log(2.0)});
  auto t = softmax(x, -1);
  CHECK(t.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(t.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  FloatTensor masked({4}, {0.3f, -1e9f, 1.2f, 0.0f});
  auto u = softmax(masked, 0);
  CHECK(u.data()[1] < 1e-9f);
}

TEST_CASE("softmax slices are distributions") {
  auto x = random_normal({3, 4, 5}, 9, 20.0);
  for (int axis : {0, 1, 2}) {
    auto s = softmax(x, axis);
    const auto& sh = x.shape();
    std::size_t stride = 1;
    for (int d = axis + 1; d < 3; ++d) stride *= sh[d];
    const std::size_t len = sh[axis];
    for (std::size_t base = 0; base < s.numel(); ++base) {
      if ((base / stride) % len != 0) continue;
      double total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        double v = s.data()[base + k * stride];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer_norm examples") {
  DoubleTensor ones({4}, {1, 1, 1, 1});
  DoubleTensor zeros({4}, {0, 0, 0, 0});
  DoubleTensor row({1, 4}, {3, 3, 3, 3});
  auto y = layer_norm(row, ones, zeros, 1e-5);
  for (double v : y.data()) CHECK(v == 0.0);

  DoubleTensor bias({4}, {0.5, -1, 2, 7});
  auto x = random_normal({3, 4}, 4);
  auto z = layer_norm(x, zeros, bias, 1e-5);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == bias.data()[i % 4]);

  auto gain = random_normal({4}, 11);
  auto w = layer_norm(x, gain, bias, 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t k = 0; k < 4; ++k) mu += x.data()[r * 4 + k];
    mu /= 4;
    for (std::size_t k = 0; k < 4; ++k) var += std::pow(x.data()[r * 4 + k] - mu, 2);
    var /= 4;
    for (std::size_t k = 0; k < 4; ++k) {
      double ref = (x.data()[r * 4 + k] - mu) / std::sqrt(var + 1e-5) * gain.data()[k] + bias.data()[k];
      CHECK(std::abs(w.data()[r * 4 + k] - ref) < 1e-5);
    }
  }
}

TEST_CASE("backward of sum(x*x) is 2x") {
  auto x = random_normal({5}, 3);
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));
}

TEST_CASE("backward on non-scalar throws") {
  auto x = random_normal({2, 2}, 3);
  x.set_requires_grad(true);
  CHECK_THROWS_AS(relu(x).backward(), ContractError);
}

TEST_CASE("every requires_grad leaf gets a grad") {
  auto a = random_normal({2, 3}, 1);
  auto b = random_normal({3, 2}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  sum(matmul(a, b)).backward();
  CHECK(a.has_grad());
  CHECK(b.has_grad());
  CHECK(a.grad().size() == a.numel());
}

TEST_CASE("shared subexpression accumulates") {
  // y = relu-free chain that reuses h twice
  auto fn = [](const std::vector<DoubleTensor>& in) {
    auto h = matmul(in[0], in[1]);
    return add(mul(h, h), softmax(h, -1));
  };
  auto r = grad_check("shared", fn, {Shape{3, 4}, Shape{4, 2}});
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-4);

  auto x = random_normal({3}, 8);
  x.set_requires_grad(true);
  auto h = scale(x, 3.0);
  sum(add(h, mul(h, x))).backward();
  // d/dx [3x + 3x^2] = 3 + 6x
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(3 + 6 * x.data()[i]));
}

TEST_CASE("finite-difference checks across shapes") {
  const std::vector<std::pair<Shape, Shape>> mm = {{{2, 3}, {3, 4}}, {{5, 1}, {1, 6}}, {{2, 4, 3}, {3, 2}}};
  for (const auto& [sa, sb] : mm) {
    auto r = grad_check("matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {sa, sb});
    CHECK_MESSAGE(r.passed, shape_str(sa), " x ", shape_str(sb), " err=", r.max_rel_error);
  }
  for (const Shape& s : {Shape{4}, Shape{3, 5}, Shape{2, 3, 4}}) {
    auto sm = grad_check("softmax", [](const auto& in) { return softmax(in[0], -1); }, {s});
    CHECK(sm.passed);
    auto ln = grad_check(
        "layer_norm",
        [](const auto& in) { return layer_norm(in[0], in[1], in[2], 1e-5); },
        {s, Shape{s.back()}, Shape{s.back()}});
    CHECK(ln.passed);
    auto ml = grad_check("mul", [](const auto& in) { return mul(in[0], in[1]); }, {s, s});
    CHECK(ml.passed);
  }
  auto chain = grad_check(
      "softmax_matmul",
      [](const auto& in) { return matmul(softmax(matmul(in[0], in[1]), -1), in[2]); },
      {Shape{3, 4}, Shape{4, 5}, Shape{5, 2}});
  CHECK(chain.passed);
  CHECK(chain.max_rel_error < 1e-4);
}

TEST_CASE("report invariant: passed iff error below tolerance") {
  GradCheckOptions opts;
  opts.tolerance = 1e-4;
  auto r = grad_check("sum", [](const auto& in) { return sum(in[0]); }, {Shape{3}}, opts);
  CHECK(r.passed == (r.max_rel_error < r.tolerance));
  CHECK(r.epsilon == 1e-3);
}

TEST_CASE("sign flip makes the check fail") {
  set_backward_sign_flip("matmul");
  auto r = grad_check("matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {Shape{2, 3}, Shape{3, 2}});
  set_backward_sign_flip("");
  CHECK_FALSE(r.passed);
}

TEST_CASE("cross_entropy of uniform logits is ln V") {
  FloatTensor logits = FloatTensor::zeros({3, 7});
  std::vector<std::int32_t> t{1, 4, 6};
  CHECK(cross_entropy(logits, std::span<const std::int32_t>(t)).item() == doctest::Approx(std::log(7.0)));
}
