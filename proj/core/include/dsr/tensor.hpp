#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dsr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One value in the differentiation graph. Operations create a node holding
// their result, the input nodes, and a closure that pushes the node's
// gradient into the inputs.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;  // construction order
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g);
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient.
//
// Tensor is a handle: copies share the same storage and graph node, the way
// parameters are shared between a network and its optimizer. Use clone() for
// an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access. Only valid on leaves; writing into an interior node
  // silently desynchronizes it from its inputs.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  // Gradient buffer; zeros if nothing has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse pass from a scalar root. Leaf gradients accumulate across calls;
  // interior gradients are recomputed each time.
  void backward() const;

  // Same values, no graph, requires_grad off.
  Tensor detach() const;
  // Independent copy of values; keeps requires_grad, drops the graph.
  Tensor clone() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// While alive, operations on this thread record no graph edges. Spike
// simulation runs under this guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- elementwise --------------------------------------------------------
// Binary ops require identical shapes, or one operand with a single element
// (scalar-tensor broadcasting). Everything else is a DimensionError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// clamp(x, lo, hi) = max(lo, min(x, hi)). The sub-derivative with respect to
// x is 1 on the closed interval [lo, hi]; d/d(hi) is 1 where x > hi and
// d/d(lo) is 1 where x < lo. lo and hi are single-element tensors so that a
// trainable bound (the spike threshold) receives a gradient.
Tensor clamp(const Tensor& x, const Tensor& lo, const Tensor& hi);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- linear algebra -------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
// x[B, in] * w[out, in]^T (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};
// Cross-correlation with zero padding: x[B,C,H,W], w[F,C,kh,kw] -> [B,F,H',W'].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = {},
              Conv2dOptions options = {});
// Mean over non-overlapping k x k windows of x[B,C,H,W].
Tensor avg_pool2d(const Tensor& x, std::size_t k);

// ---- normalization ----------------------------------------------------------
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
  std::size_t count = 0;    // elements per channel
};

// Per-channel statistics of x[M, C, ...] over every axis except 1.
ChannelStats channel_stats(const Tensor& x);

// Batch normalization of x[M, C, ...] with statistics computed from x itself
// and differentiated through. When var_override is set, that variance is used
// as a constant instead of the batch variance (the mean is still the batch
// mean of x).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps, const std::vector<double>* var_override = nullptr);
// Normalization with externally supplied constant statistics.
Tensor batch_norm_fixed(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        std::span<const double> mean, std::span<const double> var,
                        double eps);

// ---- loss -----------------------------------------------------------------
// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---- value substitution ---------------------------------------------------
// Forward value taken from `values`; gradient passes straight to x.
Tensor substitute(const Tensor& x, std::vector<double> values);
// round(x / step) * step with a straight-through (identity) gradient.
Tensor round_ste(const Tensor& x, double step);

// ---- threading ------------------------------------------------------------
// Worker count for batch-parallel kernels. Kernels split work so that every
// output element is written by exactly one worker and reductions run in a
// fixed order, so results do not depend on this value.
void set_num_threads(std::size_t n);
std::size_t num_threads();

}  // namespace dsr
