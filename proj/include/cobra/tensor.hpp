#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cobra {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  NdArray reshaped(Shape shape) const;

  /// Elementwise `this += other`; shapes must match exactly.
  void add_inplace(const NdArray& other);

  bool operator==(const NdArray& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Reverse-mode graph
// ---------------------------------------------------------------------------

struct Node {
  NdArray value;
  NdArray grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  NdArray& grad_buffer();

  // Unlinks long parent chains iteratively instead of by nested destructor calls.
  ~Node();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const NdArray& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; zeros if nothing has flowed here yet.
  const NdArray& grad() const { return node_->grad_buffer(); }
  void zero_grad() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that does not receive gradients.
Var constant(NdArray value);
/// Leaf that accumulates gradients.
Var variable(NdArray value);

/// Builds a node from parents and a backward rule; requires_grad is inherited.
Var make_node(NdArray value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
/// Gradients accumulate across calls.
void backward(const Var& loss);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// input [C_in,H,W], kernel [C_out,C_in,k,k]; cross-correlation, zero padding.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding);

/// input [C_in,V], kernel [C_out,C_in,k]; "same" zero padding of dilation*(k-1)/2.
Var conv1d_dilated(const Var& input, const Var& kernel, std::size_t dilation);

/// Adds bias[c] to every element of channel c; x has shape [C,...].
Var add_channel_bias(const Var& x, const Var& bias);

Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var sum(const Var& x);
Var square(const Var& x);
Var scale(const Var& x, double factor);

/// Forward identity, backward zero.
Var stop_gradient(const Var& x);

/// Concatenates along axis 1 of rank-2 inputs: [V,A] ++ [V,B] -> [V,A+B].
Var concat_cols(const Var& a, const Var& b);

/// [R,C] -> [C,R].
Var transpose2d(const Var& x);

/// Clamps every element to [lo,hi]; gradient passes only where not clamped.
Var clamp(const Var& x, double lo, double hi);

enum class DropoutMode { kOff, kOn };

/// Inverted dropout. With mode kOff (or rate 0) returns x unchanged.
Var dropout(const Var& x, double rate, DropoutMode mode, std::mt19937_64& rng);

/// Samples feature_map [C,H,W] at normalized points [V,2] (x,y in [0,1]),
/// returning [V,C]. Points map to x*(W-1), y*(H-1); out-of-range points clamp
/// to the border. Gradient reaches the feature map only.
Var bilinear_sample(const Var& feature_map, const NdArray& points);

/// Same forward as bilinear_sample, but the gradient also flows into the
/// point coordinates through the analytic bilinear derivative.
Var bilinear_sample_differentiable(const Var& feature_map, const Var& points);

}  // namespace cobra
