#include "aqg/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "aqg/errors.hpp"

namespace aqg {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
std::string g_sign_flip_op;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
  }
}

// Builds a result node. Parents and backward are recorded only when grad
// mode is on and some parent needs a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<const Tensor<T>*> parents,
                      std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (auto* p : parents) needs = needs || p->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (auto* p : parents) node->parents.push_back(p->node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m, r] (+)= op(A)[m, q] * op(B)[q, r]. A is stored [q, m] when trans_a,
// B is stored [r, q] when trans_b.
template <typename T>
void gemm(const T* a, bool trans_a, const T* b, bool trans_b, T* c,
          std::size_t m, std::size_t q, std::size_t r, bool accumulate) {
  using Map = Eigen::Map<const RowMat<T>>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto eq = static_cast<Eigen::Index>(q);
  const auto er = static_cast<Eigen::Index>(r);
  Eigen::Map<RowMat<T>> cm(c, em, er);
  Map am(a, trans_a ? eq : em, trans_a ? em : eq);
  Map bm(b, trans_b ? er : eq, trans_b ? eq : er);
  if (!accumulate) cm.setZero();
  if (trans_a && trans_b) {
    cm.noalias() += am.transpose() * bm.transpose();
  } else if (trans_a) {
    cm.noalias() += am.transpose() * bm;
  } else if (trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am * bm;
  }
}

// Right-aligned broadcast of two shapes. Strides are per output dimension,
// zero where the input is broadcast.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Broadcast plan;
  plan.out.assign(rank, 1);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ia = i + a.size();
    const std::size_t ib = i + b.size();
    const std::size_t da = ia >= rank ? a[ia - rank] : 1;
    const std::size_t db = ib >= rank ? b[ib - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                           " with " + shape_str(b));
    }
    plan.out[i] = std::max(da, db);
    if (ia >= rank && da != 1) plan.stride_a[i] = sa[ia - rank];
    if (ib >= rank && db != 1) plan.stride_b[i] = sb[ib - rank];
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void broadcast_loop(const Broadcast& plan, F&& f) {
  const std::size_t rank = plan.out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t ia = plan.stride_a[rank - 1];
  const std::size_t ib = plan.stride_b[rank - 1];
  const std::size_t outer = shape_numel(plan.out) / inner;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * inner;
    for (std::size_t j = 0; j < inner; ++j) f(base + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += plan.stride_a[d];
      ob += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      oa -= plan.stride_a[d] * plan.out[d];
      ob -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_backward_sign_flip(std::string op) { g_sign_flip_op = std::move(op); }
const std::string& backward_sign_flip() { return g_sign_flip_op; }

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  return shape()[normalize_axis(axis, rank())];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a tensor that does not require grad");
  }
  using N = detail::Node<T>;
  // Iterative post-order DFS gives a topological order.
  std::vector<N*> order;
  std::unordered_set<N*> visited;
  std::vector<std::pair<N*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      N* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (N* n : order) {
    if (n->backward) {
      n->grad.assign(n->data.size(), T(0));
    } else {
      n->ensure_grad();
    }
  }
  node_->grad[0] += T(1);
  const std::string& flip = g_sign_flip_op;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    N* n = *it;
    if (!n->backward) continue;
    if (!flip.empty() && flip == n->op) {
      for (auto& g : n->grad) g = -g;
    }
    n->backward(*n);
  }
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <typename T>
std::vector<T>* grad_if(detail::Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = plan_broadcast(a.shape(), b.shape(), "add");
  std::vector<T> out(shape_numel(plan.out));
  auto da = a.data();
  auto db = b.data();
  broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = da[i] + db[j];
  });
  return make_result<T>("add", plan.out, std::move(out), {&a, &b},
                        [plan](detail::Node<T>& self) {
                          auto* ga = grad_if(self, 0);
                          auto* gb = grad_if(self, 1);
                          const auto& g = self.grad;
                          broadcast_loop(plan, [&](std::size_t o, std::size_t i,
                                                   std::size_t j) {
                            if (ga) (*ga)[i] += g[o];
                            if (gb) (*gb)[j] += g[o];
                          });
                        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = plan_broadcast(a.shape(), b.shape(), "sub");
  std::vector<T> out(shape_numel(plan.out));
  auto da = a.data();
  auto db = b.data();
  broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = da[i] - db[j];
  });
  return make_result<T>("sub", plan.out, std::move(out), {&a, &b},
                        [plan](detail::Node<T>& self) {
                          auto* ga = grad_if(self, 0);
                          auto* gb = grad_if(self, 1);
                          const auto& g = self.grad;
                          broadcast_loop(plan, [&](std::size_t o, std::size_t i,
                                                   std::size_t j) {
                            if (ga) (*ga)[i] += g[o];
                            if (gb) (*gb)[j] -= g[o];
                          });
                        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = plan_broadcast(a.shape(), b.shape(), "mul");
  std::vector<T> out(shape_numel(plan.out));
  auto da = a.data();
  auto db = b.data();
  broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = da[i] * db[j];
  });
  return make_result<T>(
      "mul", plan.out, std::move(out), {&a, &b}, [plan](detail::Node<T>& self) {
        auto* ga = grad_if(self, 0);
        auto* gb = grad_if(self, 1);
        const auto& g = self.grad;
        const auto& va = self.parents[0]->data;
        const auto& vb = self.parents[1]->data;
        broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
          if (ga) (*ga)[i] += g[o] * vb[j];
          if (gb) (*gb)[j] += g[o] * va[i];
        });
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>("scale", x.shape(), std::move(out), {&x},
                        [factor](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            gx[i] += factor * self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>("relu", x.shape(), std::move(out), {&x},
                        [](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          const auto& in = self.parents[0]->data;
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            // subgradient at 0 is 0
                            if (in[i] > T(0)) gx[i] += self.grad[i];
                          }
                        });
}

// ---- matmul ----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t q = sa[sa.size() - 1];
  const std::size_t r = sb[sb.size() - 1];

  if (sb.size() == 2) {
    // Fold all batch dimensions of `a` into rows.
    const std::size_t rows = a.numel() / q;
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(r);
    std::vector<T> out(rows * r);
    gemm(a.data().data(), false, b.data().data(), false, out.data(), rows, q, r,
         false);
    return make_result<T>(
        "matmul", std::move(out_shape), std::move(out), {&a, &b},
        [rows, q, r](detail::Node<T>& self) {
          const auto& pa = *self.parents[0];
          const auto& pb = *self.parents[1];
          if (pa.requires_grad) {
            gemm(self.grad.data(), false, pb.data.data(), true,
                 self.parents[0]->ensure_grad().data(), rows, r, q, true);
          }
          if (pb.requires_grad) {
            gemm(pa.data.data(), true, self.grad.data(), false,
                 self.parents[1]->ensure_grad().data(), q, rows, r, true);
          }
        });
  }

  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Broadcast plan = plan_broadcast(batch_a, batch_b, "matmul");
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(r);
  // Offsets in units of whole matrices.
  std::vector<std::array<std::size_t, 3>> pairs;
  pairs.reserve(shape_numel(plan.out));
  broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    pairs.push_back({o, i, j});
  });
  std::vector<T> out(shape_numel(out_shape));
  for (const auto& [o, i, j] : pairs) {
    gemm(a.data().data() + i * m * q, false, b.data().data() + j * q * r, false,
         out.data() + o * m * r, m, q, r, false);
  }
  return make_result<T>(
      "matmul", std::move(out_shape), std::move(out), {&a, &b},
      [pairs = std::move(pairs), m, q, r](detail::Node<T>& self) {
        auto* ga = grad_if(self, 0);
        auto* gb = grad_if(self, 1);
        const auto& va = self.parents[0]->data;
        const auto& vb = self.parents[1]->data;
        for (const auto& [o, i, j] : pairs) {
          const T* g = self.grad.data() + o * m * r;
          if (ga) gemm(g, false, vb.data() + j * q * r, true, ga->data() + i * m * q, m, r, q, true);
          if (gb) gemm(va.data() + i * m * q, true, g, false, gb->data() + j * q * r, q, m, r, true);
        }
      });
}

// ---- softmax / layer norm --------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  const std::size_t len = s[ax];
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = x.numel() / (len * inner);
  auto in = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < inner; ++k) {
      const std::size_t base = o * len * inner + k;
      T mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      T total = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return make_result<T>(
      "softmax", s, std::move(out), {&x},
      [outer, len, inner](detail::Node<T>& self) {
        auto& gx = self.parents[0]->ensure_grad();
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t k = 0; k < inner; ++k) {
            const std::size_t base = o * len * inner + k;
            T dot = 0;
            for (std::size_t i = 0; i < len; ++i) {
              dot += g[base + i * inner] * y[base + i * inner];
            }
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t at = base + i * inner;
              gx[at] += y[at] * (g[at] - dot);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  const std::size_t d = x.dim(-1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last dim of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mu) * rstd[r];
      xhat[r * d + i] = h;
      out[r * d + i] = h * gv[i] + bv[i];
    }
  }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [xhat = std::move(xhat), rstd = std::move(rstd), rows,
       d](detail::Node<T>& self) {
        auto* gx = grad_if(self, 0);
        auto* gg = grad_if(self, 1);
        auto* gb = grad_if(self, 2);
        const auto& gain_v = self.parents[1]->data;
        const auto& g = self.grad;
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* hr = xhat.data() + r * d;
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t i = 0; i < d; ++i) {
            if (gg) (*gg)[i] += gr[i] * hr[i];
            if (gb) (*gb)[i] += gr[i];
            dh[i] = gr[i] * gain_v[i];
            mean_dh += dh[i];
            mean_dh_h += dh[i] * hr[i];
          }
          if (!gx) continue;
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t i = 0; i < d; ++i) {
            (*gx)[r * d + i] += rstd[r] * (dh[i] - mean_dh - hr[i] * mean_dh_h);
          }
        }
      });
}

// ---- shape ops -------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x},
                        [](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) {
    throw DimensionError("permute: " + std::to_string(axes.size()) +
                         " axes for rank " + std::to_string(rank));
  }
  std::vector<std::size_t> perm(rank);
  std::vector<bool> seen(rank, false);
  for (std::size_t i = 0; i < rank; ++i) {
    perm[i] = normalize_axis(axes[i], rank);
    if (seen[perm[i]]) throw DimensionError("permute: repeated axis");
    seen[perm[i]] = true;
  }
  const auto in_strides = contiguous_strides(x.shape());
  Shape out_shape(rank);
  // Stride of the input for each output dimension.
  Broadcast plan;
  plan.stride_a.resize(rank);
  plan.stride_b.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    plan.stride_a[i] = in_strides[perm[i]];
  }
  plan.out = out_shape;
  std::vector<T> out(x.numel());
  auto in = x.data();
  broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = in[i]; });
  return make_result<T>("permute", std::move(out_shape), std::move(out), {&x},
                        [plan](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t) {
                            gx[i] += self.grad[o];
                          });
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
  std::vector<int> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[normalize_axis(axis_a, x.rank())], axes[normalize_axis(axis_b, x.rank())]);
  return permute(x, axes);
}

// ---- lookup / reductions / loss -------------------------------------------

template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const std::int32_t> ids,
                    const Shape& index_shape) {
  if (weight.rank() != 2) {
    throw DimensionError("embedding: weight must be rank 2, got " +
                         shape_str(weight.shape()));
  }
  if (shape_numel(index_shape) != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) +
                         " ids for index shape " + shape_str(index_shape));
  }
  const std::size_t vocab = weight.dim(0);
  const std::size_t d = weight.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabularyError("token id " + std::to_string(id) +
                            " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d);
  auto w = weight.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(w.begin() + idx[i] * d, d, out.begin() + i * d);
  }
  Shape out_shape = index_shape;
  out_shape.push_back(d);
  return make_result<T>("embedding", std::move(out_shape), std::move(out), {&weight},
                        [idx = std::move(idx), d](detail::Node<T>& self) {
                          auto& gw = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = gw.data() + idx[i] * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.data()) total += v;
  return make_result<T>("sum", Shape{}, std::vector<T>{total}, {&x},
                        [](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (auto& g : gx) g += self.grad[0];
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::int32_t ignore_index) {
  const std::size_t vocab = logits.dim(-1);
  const std::size_t rows = logits.numel() / vocab;
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  auto in = logits.data();
  std::vector<T> probs(logits.numel());
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = tgt[r];
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw VocabularyError("target id " + std::to_string(t) + " outside vocabulary");
    }
    const T* row = in.data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    double z = 0;
    for (std::size_t i = 0; i < vocab; ++i) z += std::exp(static_cast<double>(row[i] - mx));
    const double log_z = std::log(z) + static_cast<double>(mx);
    total += log_z - static_cast<double>(row[t]);
    for (std::size_t i = 0; i < vocab; ++i) {
      probs[r * vocab + i] = static_cast<T>(std::exp(static_cast<double>(row[i]) - log_z));
    }
    ++count;
  }
  const T loss = count ? static_cast<T>(total / static_cast<double>(count)) : T(0);
  return make_result<T>(
      "cross_entropy", Shape{}, std::vector<T>{loss}, {&logits},
      [probs = std::move(probs), tgt = std::move(tgt), vocab, count,
       ignore_index](detail::Node<T>& self) {
        if (count == 0) return;
        auto& gx = self.parents[0]->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(count);
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          if (tgt[r] == ignore_index) continue;
          for (std::size_t i = 0; i < vocab; ++i) gx[r * vocab + i] += g * probs[r * vocab + i];
          gx[r * vocab + tgt[r]] -= g;
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  if (p >= T(1)) throw ConfigError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T factor = T(1) / (T(1) - p);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? factor : T(0);
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {&x},
                        [mask = std::move(mask)](detail::Node<T>& self) {
                          auto& gx = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
                        });
}

#define AQG_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                   \
  template Tensor<T> relu(const Tensor<T>&);                                       \
  template Tensor<T> softmax(const Tensor<T>&, int);                               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&,                \
                                const Tensor<T>&, T);                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);           \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                        \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>,    \
                               const Shape&);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                        \
  template Tensor<T> mean(const Tensor<T>&);                                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, \
                                   std::int32_t);                                  \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&);

AQG_INSTANTIATE(float)
AQG_INSTANTIATE(double)

#undef AQG_INSTANTIATE

}  // namespace aqg
