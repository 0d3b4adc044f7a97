#include "dsr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "dsr/errors.hpp"

namespace dsr {

namespace {

std::atomic<std::uint64_t> g_seq{0};
std::atomic<std::size_t> g_threads{1};
thread_local bool t_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = g_seq.fetch_add(1);
  return node;
}

// Builds an interior node. The graph edge and closure are kept only when some
// input participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto node = make_node(std::move(shape), std::move(value));
  const bool needs = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& p) { return p && p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw UsageError(std::string(what) + ": undefined tensor");
}

bool is_scalar_like(const Tensor& t) { return t.numel() == 1; }

// Shape of a binary elementwise result, or DimensionError.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar_like(b)) return a.shape();
  if (is_scalar_like(a)) return b.shape();
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()) + " do not match");
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, GradA ga,
                 GradB gb) {
  require_defined(a, name);
  require_defined(b, name);
  Shape out_shape = broadcast_shape(a, b, name);
  const std::size_t n = shape_numel(out_shape);
  const bool a_bc = a.numel() == 1 && n != 1;
  const bool b_bc = b.numel() == 1 && n != 1;
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_bc ? 0 : i], bv[b_bc ? 0 : i]);
  return make_result(std::move(out_shape), std::move(out), {a.node(), b.node()},
                     [a_bc, b_bc, ga, gb](detail::Node& self) {
                       auto& an = *self.inputs[0];
                       auto& bn = *self.inputs[1];
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const double x = an.value[a_bc ? 0 : i];
                         const double y = bn.value[b_bc ? 0 : i];
                         const double g = self.grad[i];
                         if (an.requires_grad) an.accumulate(a_bc ? 0 : i, g * ga(x, y));
                         if (bn.requires_grad) bn.accumulate(b_bc ? 0 : i, g * gb(x, y));
                       }
                     });
}

}  // namespace

// ---- shapes -----------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- node ---------------------------------------------------------------------

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

void detail::Node::accumulate(std::size_t i, double g) { grad_buffer()[i] += g; }

// ---- tensor -------------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  const std::size_t n = shape_numel(shape);
  node_ = make_node(std::move(shape), std::vector<double>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  node_ = make_node(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Tensor t(Shape{1}, std::vector<double>{value});
  t.set_requires_grad(requires_grad);
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range");
  return shape()[axis];
}

std::size_t Tensor::numel() const { return defined() ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  if (!node_->is_leaf) throw UsageError("requires_grad can only be changed on leaves");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return defined() && node_->is_leaf; }

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  require_defined(*this, "grad");
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (defined()) node_->grad.clear();
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (numel() != 1)
    throw UsageError("backward() requires a scalar root, got " + shape_string(shape()));
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs)
      if (in && in->requires_grad) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
  for (auto* n : order)
    if (!n->is_leaf) n->grad.clear();

  node_->accumulate(0, 1.0);
  for (auto* n : order)
    if (!n->is_leaf && n->backward && !n->grad.empty()) n->backward(*n);
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(node_->shape, node_->value);
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = requires_grad();
  return t;
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a.node()}, [factor](detail::Node& self) {
    auto& in = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.accumulate(i, self.grad[i] * factor);
  });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result(Shape{1}, {s}, {a.node()}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a.node()}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor clamp(const Tensor& x, const Tensor& lo, const Tensor& hi) {
  require_defined(x, "clamp");
  if (lo.numel() != 1 || hi.numel() != 1)
    throw DimensionError("clamp bounds must be single-element tensors");
  const double l = lo.item();
  const double h = hi.item();
  if (l > h) throw ParameterError("clamp: lower bound exceeds upper bound");
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::max(l, std::min(xv[i], h));
  return make_result(x.shape(), std::move(out), {x.node(), lo.node(), hi.node()},
                     [](detail::Node& self) {
                       auto& xn = *self.inputs[0];
                       auto& ln = *self.inputs[1];
                       auto& hn = *self.inputs[2];
                       const double l = ln.value[0];
                       const double h = hn.value[0];
                       double dl = 0.0;
                       double dh = 0.0;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const double v = xn.value[i];
                         const double g = self.grad[i];
                         if (v < l) {
                           dl += g;
                         } else if (v > h) {
                           dh += g;
                         } else if (xn.requires_grad) {
                           xn.accumulate(i, g);
                         }
                       }
                       if (ln.requires_grad) ln.accumulate(0, dl);
                       if (hn.requires_grad) hn.accumulate(0, dh);
                     });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return clamp(x, Tensor::scalar(lo), Tensor::scalar(hi));
}

// ---- linear algebra ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  return make_result(Shape{m, n}, std::move(out), {a.node(), b.node()},
                     [m, k, n](detail::Node& self) {
                       auto& an = *self.inputs[0];
                       auto& bn = *self.inputs[1];
                       const auto& g = self.grad;
                       if (an.requires_grad) {
                         auto& ga = an.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn.value[p * n + j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (bn.requires_grad) {
                         auto& gb = bn.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double x = an.value[i * k + p];
                             if (x == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
                           }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw DimensionError("linear: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()));
  const std::size_t batch = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (bias.defined() && (bias.numel() != out_f))
    throw DimensionError("linear: bias has " + std::to_string(bias.numel()) + " values, expected " +
                         std::to_string(out_f));
  auto xv = x.data();
  auto wv = w.data();
  std::vector<double> out(batch * out_f, 0.0);
  parallel_for(batch, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b)
      for (std::size_t o = 0; o < out_f; ++o) {
        double s = bias.defined() ? bias.data()[o] : 0.0;
        const double* wr = &wv[o * in];
        const double* xr = &xv[b * in];
        for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
        out[b * out_f + o] = s;
      }
  });
  std::vector<NodePtr> inputs{x.node(), w.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  return make_result(
      Shape{batch, out_f}, std::move(out), std::move(inputs),
      [batch, in, out_f](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        const auto& g = self.grad;
        if (xn.requires_grad) {
          auto& gx = xn.grad_buffer();
          parallel_for(batch, [&](std::size_t b0, std::size_t b1) {
            for (std::size_t b = b0; b < b1; ++b)
              for (std::size_t o = 0; o < out_f; ++o) {
                const double go = g[b * out_f + o];
                if (go == 0.0) continue;
                for (std::size_t i = 0; i < in; ++i) gx[b * in + i] += go * wn.value[o * in + i];
              }
          });
        }
        if (wn.requires_grad) {
          auto& gw = wn.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_f; ++o) {
              const double go = g[b * out_f + o];
              if (go == 0.0) continue;
              for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * xn.value[b * in + i];
            }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[b * out_f + o];
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  require_defined(x, "conv2d");
  require_defined(w, "conv2d");
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + ", kernel " +
                         shape_string(w.shape()));
  if (opt.stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t P = opt.padding, S = opt.stride;
  if (KH > H + 2 * P || KW > W + 2 * P)
    throw DimensionError("conv2d: kernel " + shape_string(w.shape()) + " larger than padded input " +
                         shape_string(x.shape()));
  if (bias.defined() && bias.numel() != F) throw DimensionError("conv2d: bias size mismatch");
  const std::size_t OH = (H + 2 * P - KH) / S + 1;
  const std::size_t OW = (W + 2 * P - KW) / S + 1;
  auto xv = x.data();
  auto wv = w.data();
  std::vector<double> out(B * F * OH * OW, 0.0);

  // Visits every (kernel tap, output row) pair of one sample. The body gets
  // the output row offset, the input offset of output column 0 (may be
  // negative because of padding), the weight index and the valid column
  // range [lo, hi).
  std::vector<std::size_t> col_lo(KW), col_hi(KW);
  for (std::size_t kj = 0; kj < KW; ++kj) {
    col_lo[kj] = kj >= P ? 0 : (P - kj + S - 1) / S;
    col_hi[kj] = W + P >= kj + 1 ? std::min(OW, (W + P - kj - 1) / S + 1) : 0;
  }
  auto for_rows = [=](std::size_t b, auto&& body) {
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ki = 0; ki < KH; ++ki)
          for (std::size_t oh = 0; oh < OH; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * S + ki) - static_cast<std::ptrdiff_t>(P);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            const std::size_t obase = ((b * F + f) * OH + oh) * OW;
            const std::ptrdiff_t ibase =
                static_cast<std::ptrdiff_t>(((b * C + c) * H + static_cast<std::size_t>(ih)) * W);
            for (std::size_t kj = 0; kj < KW; ++kj) {
              if (col_lo[kj] >= col_hi[kj]) continue;
              body(obase, ibase + static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(P),
                   ((f * C + c) * KH + ki) * KW + kj, col_lo[kj], col_hi[kj]);
            }
          }
  };

  // Spike inputs are mostly zero; scattering each nonzero input is then much
  // cheaper than the dense row sweep. The path depends only on the data, so
  // results stay reproducible.
  const std::size_t nonzero =
      static_cast<std::size_t>(std::count_if(xv.begin(), xv.end(), [](double v) { return v != 0.0; }));
  const bool sparse = nonzero * 2 < xv.size();
  std::vector<double> wt;  // [C, KH, KW, F]
  if (sparse) {
    wt.resize(wv.size());
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t k = 0; k < C * KH * KW; ++k) wt[k * F + f] = wv[f * C * KH * KW + k];
  }

  parallel_for(B, [&](std::size_t b0, std::size_t b1) {
    const double* xp = xv.data();
    double* op = out.data();
    for (std::size_t b = b0; b < b1; ++b) {
      if (bias.defined())
        for (std::size_t f = 0; f < F; ++f)
          std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(((b * F + f) * OH) * OW), OH * OW,
                      bias.data()[f]);
      if (!sparse) {
        for_rows(b, [&](std::size_t o, std::ptrdiff_t i, std::size_t k, std::size_t lo, std::size_t hi) {
          const double wk = wv[k];
          if (wk == 0.0) return;
          double* orow = op + o;
          const double* irow = xp + i;
          for (std::size_t ow = lo; ow < hi; ++ow) orow[ow] += wk * irow[ow * S];
        });
        continue;
      }
      const std::size_t plane = OH * OW;
      double* ob = op + b * F * plane;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ih = 0; ih < H; ++ih)
          for (std::size_t iw = 0; iw < W; ++iw) {
            const double xval = xp[((b * C + c) * H + ih) * W + iw];
            if (xval == 0.0) continue;
            for (std::size_t ki = 0; ki < KH; ++ki) {
              const std::size_t ty = ih + P;
              if (ty < ki || (ty - ki) % S != 0) continue;
              const std::size_t oh = (ty - ki) / S;
              if (oh >= OH) continue;
              for (std::size_t kj = 0; kj < KW; ++kj) {
                const std::size_t tx = iw + P;
                if (tx < kj || (tx - kj) % S != 0) continue;
                const std::size_t ow = (tx - kj) / S;
                if (ow >= OW) continue;
                const double* wrow = &wt[((c * KH + ki) * KW + kj) * F];
                double* o = ob + oh * OW + ow;
                for (std::size_t f = 0; f < F; ++f) o[f * plane] += wrow[f] * xval;
              }
            }
          }
    }
  });

  std::vector<NodePtr> inputs{x.node(), w.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  return make_result(
      Shape{B, F, OH, OW}, std::move(out), std::move(inputs),
      [=](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        const double* g = self.grad.data();
        if (xn.requires_grad) {
          double* gx = xn.grad_buffer().data();
          const double* wp = wn.value.data();
          parallel_for(B, [&](std::size_t b0, std::size_t b1) {
            for (std::size_t b = b0; b < b1; ++b)
              for_rows(b, [&](std::size_t o, std::ptrdiff_t i, std::size_t k, std::size_t lo, std::size_t hi) {
                const double wk = wp[k];
                const double* grow = g + o;
                double* xrow = gx + i;
                for (std::size_t ow = lo; ow < hi; ++ow) xrow[ow * S] += grow[ow] * wk;
              });
          });
        }
        if (wn.requires_grad) {
          double* gw = wn.grad_buffer().data();
          const double* xp = xn.value.data();
          for (std::size_t b = 0; b < B; ++b)
            for_rows(b, [&](std::size_t o, std::ptrdiff_t i, std::size_t k, std::size_t lo, std::size_t hi) {
              const double* grow = g + o;
              const double* xrow = xp + i;
              double s = 0.0;
              for (std::size_t ow = lo; ow < hi; ++ow) s += grow[ow] * xrow[ow * S];
              gw[k] += s;
            });
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->grad_buffer();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t f = 0; f < F; ++f)
              for (std::size_t p = 0; p < OH * OW; ++p) gb[f] += g[(b * F + f) * OH * OW + p];
        }
      });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  require_defined(x, "avg_pool2d");
  if (x.rank() != 4) throw DimensionError("avg_pool2d expects [B,C,H,W], got " + shape_string(x.shape()));
  if (k == 0) throw ParameterError("avg_pool2d: window must be positive");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % k != 0 || W % k != 0)
    throw DimensionError("avg_pool2d: spatial extents " + shape_string(x.shape()) +
                         " not divisible by " + std::to_string(k));
  const std::size_t OH = H / k, OW = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  auto xv = x.data();
  std::vector<double> out(B * C * OH * OW, 0.0);
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        out[(p * OH + i / k) * OW + j / k] += xv[(p * H + i) * W + j] * inv;
  return make_result(Shape{B, C, OH, OW}, std::move(out), {x.node()},
                     [=](detail::Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t p = 0; p < B * C; ++p)
                         for (std::size_t i = 0; i < H; ++i)
                           for (std::size_t j = 0; j < W; ++j)
                             g[(p * H + i) * W + j] += self.grad[(p * OH + i / k) * OW + j / k] * inv;
                     });
}

// ---- normalization ------------------------------------------------------------------

namespace {

struct ChannelLayout {
  std::size_t outer;  // extent of axis 0
  std::size_t channels;
  std::size_t inner;  // product of axes after 1
};

ChannelLayout channel_layout(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("batch norm expects [M, C, ...], got " + shape_string(x.shape()));
  std::size_t inner = 1;
  for (std::size_t a = 2; a < x.rank(); ++a) inner *= x.dim(a);
  return {x.dim(0), x.dim(1), inner};
}

void check_affine(const Tensor& gamma, const Tensor& beta, std::size_t channels) {
  if (gamma.numel() != channels || beta.numel() != channels)
    throw DimensionError("batch norm: affine parameters must have " + std::to_string(channels) +
                         " entries");
}

}  // namespace

ChannelStats channel_stats(const Tensor& x) {
  const auto L = channel_layout(x);
  auto xv = x.data();
  ChannelStats st;
  st.count = L.outer * L.inner;
  st.mean.assign(L.channels, 0.0);
  st.var.assign(L.channels, 0.0);
  for (std::size_t m = 0; m < L.outer; ++m)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t p = 0; p < L.inner; ++p) st.mean[c] += xv[(m * L.channels + c) * L.inner + p];
  for (auto& v : st.mean) v /= static_cast<double>(st.count);
  for (std::size_t m = 0; m < L.outer; ++m)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t p = 0; p < L.inner; ++p) {
        const double d = xv[(m * L.channels + c) * L.inner + p] - st.mean[c];
        st.var[c] += d * d;
      }
  for (auto& v : st.var) v /= static_cast<double>(st.count);
  return st;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  const std::vector<double>* var_override) {
  require_defined(x, "batch_norm");
  const auto L = channel_layout(x);
  check_affine(gamma, beta, L.channels);
  if (eps <= 0.0) throw ParameterError("batch norm: eps must be positive");
  if (var_override && var_override->size() != L.channels)
    throw DimensionError("batch norm: variance override size mismatch");
  const ChannelStats st = channel_stats(x);
  std::vector<double> inv_std(L.channels);
  for (std::size_t c = 0; c < L.channels; ++c)
    inv_std[c] = 1.0 / std::sqrt((var_override ? (*var_override)[c] : st.var[c]) + eps);

  auto xv = x.data();
  std::vector<double> xhat(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t m = 0; m < L.outer; ++m)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t p = 0; p < L.inner; ++p) {
        const std::size_t i = (m * L.channels + c) * L.inner + p;
        xhat[i] = (xv[i] - st.mean[c]) * inv_std[c];
        out[i] = gamma.data()[c] * xhat[i] + beta.data()[c];
      }
  const bool var_const = var_override != nullptr;
  return make_result(
      x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
      [L, xhat = std::move(xhat), inv_std = std::move(inv_std), var_const,
       count = static_cast<double>(st.count)](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        std::vector<double> sum_g(L.channels, 0.0), sum_gx(L.channels, 0.0);
        for (std::size_t m = 0; m < L.outer; ++m)
          for (std::size_t c = 0; c < L.channels; ++c)
            for (std::size_t p = 0; p < L.inner; ++p) {
              const std::size_t i = (m * L.channels + c) * L.inner + p;
              sum_g[c] += self.grad[i];
              sum_gx[c] += self.grad[i] * xhat[i];
            }
        if (gn.requires_grad)
          for (std::size_t c = 0; c < L.channels; ++c) gn.accumulate(c, sum_gx[c]);
        if (bn.requires_grad)
          for (std::size_t c = 0; c < L.channels; ++c) bn.accumulate(c, sum_g[c]);
        if (!xn.requires_grad) return;
        auto& gx = xn.grad_buffer();
        for (std::size_t m = 0; m < L.outer; ++m)
          for (std::size_t c = 0; c < L.channels; ++c)
            for (std::size_t p = 0; p < L.inner; ++p) {
              const std::size_t i = (m * L.channels + c) * L.inner + p;
              double d = self.grad[i] - sum_g[c] / count;
              if (!var_const) d -= xhat[i] * sum_gx[c] / count;
              gx[i] += gn.value[c] * inv_std[c] * d;
            }
      });
}

Tensor batch_norm_fixed(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        std::span<const double> mean_in, std::span<const double> var_in,
                        double eps) {
  require_defined(x, "batch_norm_fixed");
  const auto L = channel_layout(x);
  check_affine(gamma, beta, L.channels);
  if (mean_in.size() != L.channels || var_in.size() != L.channels)
    throw DimensionError("batch norm: statistics size mismatch");
  std::vector<double> mu(mean_in.begin(), mean_in.end());
  std::vector<double> inv_std(L.channels);
  for (std::size_t c = 0; c < L.channels; ++c) {
    if (var_in[c] < 0.0) throw ParameterError("batch norm: negative variance");
    inv_std[c] = 1.0 / std::sqrt(var_in[c] + eps);
  }
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t m = 0; m < L.outer; ++m)
    for (std::size_t c = 0; c < L.channels; ++c)
      for (std::size_t p = 0; p < L.inner; ++p) {
        const std::size_t i = (m * L.channels + c) * L.inner + p;
        out[i] = gamma.data()[c] * (xv[i] - mu[c]) * inv_std[c] + beta.data()[c];
      }
  return make_result(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                     [L, mu = std::move(mu), inv_std = std::move(inv_std)](detail::Node& self) {
                       auto& xn = *self.inputs[0];
                       auto& gn = *self.inputs[1];
                       auto& bn = *self.inputs[2];
                       for (std::size_t m = 0; m < L.outer; ++m)
                         for (std::size_t c = 0; c < L.channels; ++c)
                           for (std::size_t p = 0; p < L.inner; ++p) {
                             const std::size_t i = (m * L.channels + c) * L.inner + p;
                             const double g = self.grad[i];
                             if (xn.requires_grad) xn.accumulate(i, g * gn.value[c] * inv_std[c]);
                             if (gn.requires_grad)
                               gn.accumulate(c, g * (xn.value[i] - mu[c]) * inv_std[c]);
                             if (bn.requires_grad) bn.accumulate(c, g);
                           }
                     });
}

// ---- loss ------------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined(logits, "softmax_cross_entropy");
  if (logits.rank() != 2) throw DimensionError("cross entropy expects [B, K] logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B)
    throw DimensionError("cross entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(B));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw InputError("cross entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(K) + ")");
  auto lv = logits.data();
  std::vector<double> prob(B * K);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = &lv[b * K];
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < K; ++k) prob[b * K + k] = std::exp(row[k] - mx) / z;
    loss += -(row[labels[b]] - mx - std::log(z));
  }
  loss /= static_cast<double>(B);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result(Shape{1}, {loss}, {logits.node()},
                     [B, K, prob = std::move(prob), lab = std::move(lab)](detail::Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(B);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t k = 0; k < K; ++k) {
                           const double onehot = static_cast<int>(k) == lab[b] ? 1.0 : 0.0;
                           g[b * K + k] += s * (prob[b * K + k] - onehot);
                         }
                     });
}

// ---- substitution -----------------------------------------------------------------

Tensor substitute(const Tensor& x, std::vector<double> values) {
  require_defined(x, "substitute");
  if (values.size() != x.numel())
    throw DimensionError("substitute: " + std::to_string(values.size()) + " values for tensor " +
                         shape_string(x.shape()));
  return make_result(x.shape(), std::move(values), {x.node()}, [](detail::Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor round_ste(const Tensor& x, double step) {
  require_defined(x, "round_ste");
  if (!(step > 0.0)) throw ParameterError("round_ste: step must be positive");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::round(v / step) * step;
  return substitute(x, std::move(out));
}

// ---- grad mode -------------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- threading ------------------------------------------------------------------------

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_threads.load(); }

}  // namespace dsr
