#include "cobra/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "cobra/kernels.hpp"

namespace cobra {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_numel(shape_) != values_.size()) {
    throw ShapeError("NdArray: shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                     " values, got " + std::to_string(values_.size()));
  }
}

void NdArray::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

NdArray NdArray::reshaped(Shape shape) const { return NdArray(std::move(shape), values_); }

void NdArray::add_inplace(const NdArray& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("add_inplace: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
}

NdArray& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = NdArray(value.shape(), 0.0);
  return grad;
}

Node::~Node() {
  std::vector<std::shared_ptr<Node>> pending = std::move(parents);
  while (!pending.empty()) {
    std::shared_ptr<Node> n = std::move(pending.back());
    pending.pop_back();
    // Sole owner: adopt its parents so its own destructor has nothing left to recurse into.
    if (n.use_count() == 1) {
      for (auto& p : n->parents) pending.push_back(std::move(p));
      n->parents.clear();
    }
  }
}

void Var::zero_grad() const { node_->grad_buffer().fill(0.0); }

Var constant(NdArray value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var variable(NdArray value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var make_node(NdArray value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must hold a single value, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; each node is emitted once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node().grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    node->grad_buffer();
    if (node->backward_fn) node->backward_fn(*node);
  }
}

namespace {

void require_rank(const Var& x, std::size_t rank, const char* op, const char* what) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[1] != is[0]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(is[0]));
  }
  if (ks[2] != ks[3] || ks[2] % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (is[1] + 2 * padding < ks[2] || is[2] + 2 * padding < ks[2]) {
    throw ShapeError("conv2d: input " + shape_str(is) + " smaller than kernel " + shape_str(ks));
  }
  const kernels::Conv2dGeometry g{is[0], is[1], is[2], ks[0], ks[2], stride, padding};
  NdArray out({g.out_channels, g.out_height(), g.out_width()});
  kernels::parallel::conv2d_forward(g, input.value().data(), kernel.value().data(), out.data());
  return make_node(std::move(out), {input, kernel}, [g](Node& self) {
    Node& in = parent(self, 0);
    Node& w = parent(self, 1);
    if (in.requires_grad) {
      kernels::parallel::conv2d_backward_input(g, w.value.data(), self.grad.data(), in.grad_buffer().data());
    }
    if (w.requires_grad) {
      kernels::parallel::conv2d_backward_weight(g, in.value.data(), self.grad.data(), w.grad_buffer().data());
    }
  });
}

Var conv1d_dilated(const Var& input, const Var& kernel, std::size_t dilation) {
  require_rank(input, 2, "conv1d_dilated", "input");
  require_rank(kernel, 3, "conv1d_dilated", "kernel");
  if (dilation < 1) throw ShapeError("conv1d_dilated: dilation must be >= 1");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[1] != is[0]) {
    throw ShapeError("conv1d_dilated: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(is[0]));
  }
  if (ks[2] % 2 == 0) throw ShapeError("conv1d_dilated: kernel size must be odd");
  const kernels::Conv1dGeometry g{is[0], is[1], ks[0], ks[2], dilation};
  NdArray out({g.out_channels, g.length});
  kernels::parallel::conv1d_forward(g, input.value().data(), kernel.value().data(), out.data());
  return make_node(std::move(out), {input, kernel}, [g](Node& self) {
    Node& in = parent(self, 0);
    Node& w = parent(self, 1);
    if (in.requires_grad) {
      kernels::parallel::conv1d_backward_input(g, w.value.data(), self.grad.data(), in.grad_buffer().data());
    }
    if (w.requires_grad) {
      kernels::parallel::conv1d_backward_weight(g, in.value.data(), self.grad.data(), w.grad_buffer().data());
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank(bias, 1, "add_channel_bias", "bias");
  if (x.value().rank() < 1 || x.shape()[0] != bias.shape()[0]) {
    throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  const std::size_t channels = bias.shape()[0];
  const std::size_t inner = x.value().size() / channels;
  NdArray out = x.value();
  for (std::size_t c = 0; c < channels; ++c) {
    const double b = bias.value()[c];
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += b;
  }
  return make_node(std::move(out), {x, bias}, [channels, inner](Node& self) {
    Node& in = parent(self, 0);
    Node& b = parent(self, 1);
    if (in.requires_grad) in.grad_buffer().add_inplace(self.grad);
    if (b.requires_grad) {
      auto& gb = b.grad_buffer();
      for (std::size_t c = 0; c < channels; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < inner; ++i) s += self.grad[c * inner + i];
        gb[c] += s;
      }
    }
  });
}

Var relu(const Var& x) {
  NdArray out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {x}, [](Node& self) {
    Node& in = parent(self, 0);
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  NdArray out = a.value();
  out.add_inplace(b.value());
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (in.requires_grad) in.grad_buffer().add_inplace(self.grad);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  NdArray out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& in0 = parent(self, 0);
    Node& in1 = parent(self, 1);
    if (in0.requires_grad) {
      auto& g = in0.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * in1.value[i];
    }
    if (in1.requires_grad) {
      auto& g = in1.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * in0.value[i];
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_node(NdArray({1}, s), {x}, [](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    const double go = self.grad[0];
    for (auto& v : g.values()) v += go;
  });
}

Var square(const Var& x) {
  NdArray out = x.value();
  for (auto& v : out.values()) v = v * v;
  return make_node(std::move(out), {x}, [](Node& self) {
    Node& in = parent(self, 0);
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in.value[i] * self.grad[i];
  });
}

Var scale(const Var& x, double factor) {
  NdArray out = x.value();
  for (auto& v : out.values()) v *= factor;
  return make_node(std::move(out), {x}, [factor](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var stop_gradient(const Var& x) { return constant(x.value()); }

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols", "lhs");
  require_rank(b, 2, "concat_cols", "rhs");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  NdArray out({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out.at(r, c) = a.value().at(r, c);
    for (std::size_t c = 0; c < cb; ++c) out.at(r, ca + c) = b.value().at(r, c);
  }
  return make_node(std::move(out), {a, b}, [rows, ca, cb](Node& self) {
    Node& in0 = parent(self, 0);
    Node& in1 = parent(self, 1);
    if (in0.requires_grad) {
      auto& g = in0.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) g.at(r, c) += self.grad.at(r, c);
    }
    if (in1.requires_grad) {
      auto& g = in1.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) g.at(r, c) += self.grad.at(r, ca + c);
    }
  });
}

Var transpose2d(const Var& x) {
  require_rank(x, 2, "transpose2d", "input");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  NdArray out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = x.value().at(r, c);
  return make_node(std::move(out), {x}, [rows, cols](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += self.grad.at(c, r);
  });
}

Var clamp(const Var& x, double lo, double hi) {
  NdArray out = x.value();
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return make_node(std::move(out), {x}, [lo, hi](Node& self) {
    Node& in = parent(self, 0);
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.value[i];
      if (v >= lo && v <= hi) g[i] += self.grad[i];
    }
  });
}

Var dropout(const Var& x, double rate, DropoutMode mode, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0,1)");
  if (mode == DropoutMode::kOff || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.value().size());
  for (auto& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? 0.0 : keep_scale;
  }
  NdArray out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_node(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * self.grad[i];
  });
}

namespace {

struct SampleTap {
  std::size_t x0, x1, y0, y1;
  double fx, fy;
  // d(pixel coordinate)/d(normalized coordinate); zero where the point is clamped.
  double dpx, dpy;
};

SampleTap locate(double x, double y, std::size_t height, std::size_t width) {
  SampleTap t{};
  const double sx = static_cast<double>(width - 1), sy = static_cast<double>(height - 1);
  t.dpx = (x > 0.0 && x < 1.0) ? sx : 0.0;
  t.dpy = (y > 0.0 && y < 1.0) ? sy : 0.0;
  const double px = std::clamp(x, 0.0, 1.0) * sx;
  const double py = std::clamp(y, 0.0, 1.0) * sy;
  auto split = [](double p, std::size_t extent, std::size_t& lo, std::size_t& hi, double& frac) {
    if (extent < 2) {
      lo = hi = 0;
      frac = 0.0;
      return;
    }
    lo = std::min(static_cast<std::size_t>(std::floor(p)), extent - 2);
    hi = lo + 1;
    frac = p - static_cast<double>(lo);
  };
  split(px, width, t.x0, t.x1, t.fx);
  split(py, height, t.y0, t.y1, t.fy);
  return t;
}

struct SampleResult {
  NdArray out;
  std::vector<SampleTap> taps;
};

SampleResult sample_forward(const NdArray& fmap, const NdArray& points) {
  if (fmap.rank() != 3) throw ShapeError("bilinear_sample: feature map must be [C,H,W], got " + shape_str(fmap.shape()));
  if (points.rank() != 2 || points.dim(1) != 2) {
    throw ShapeError("bilinear_sample: points must be [V,2], got " + shape_str(points.shape()));
  }
  const std::size_t count = points.dim(0);
  if (count == 0) throw ShapeError("bilinear_sample: no points");
  const std::size_t channels = fmap.dim(0), height = fmap.dim(1), width = fmap.dim(2);
  SampleResult r{NdArray({count, channels}), {}};
  r.taps.reserve(count);
  const double* f = fmap.data();
  for (std::size_t v = 0; v < count; ++v) {
    const SampleTap t = locate(points.at(v, 0), points.at(v, 1), height, width);
    const double w00 = (1 - t.fy) * (1 - t.fx), w01 = (1 - t.fy) * t.fx;
    const double w10 = t.fy * (1 - t.fx), w11 = t.fy * t.fx;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* plane = f + c * height * width;
      r.out.at(v, c) = w00 * plane[t.y0 * width + t.x0] + w01 * plane[t.y0 * width + t.x1] +
                       w10 * plane[t.y1 * width + t.x0] + w11 * plane[t.y1 * width + t.x1];
    }
    r.taps.push_back(t);
  }
  return r;
}

void sample_backward_features(const std::vector<SampleTap>& taps, const NdArray& grad_out, NdArray& grad_map) {
  const std::size_t channels = grad_map.dim(0), height = grad_map.dim(1), width = grad_map.dim(2);
  double* g = grad_map.data();
  for (std::size_t v = 0; v < taps.size(); ++v) {
    const SampleTap& t = taps[v];
    const double w00 = (1 - t.fy) * (1 - t.fx), w01 = (1 - t.fy) * t.fx;
    const double w10 = t.fy * (1 - t.fx), w11 = t.fy * t.fx;
    for (std::size_t c = 0; c < channels; ++c) {
      const double go = grad_out.at(v, c);
      double* plane = g + c * height * width;
      plane[t.y0 * width + t.x0] += w00 * go;
      plane[t.y0 * width + t.x1] += w01 * go;
      plane[t.y1 * width + t.x0] += w10 * go;
      plane[t.y1 * width + t.x1] += w11 * go;
    }
  }
}

}  // namespace

Var bilinear_sample(const Var& feature_map, const NdArray& points) {
  auto r = sample_forward(feature_map.value(), points);
  return make_node(std::move(r.out), {feature_map}, [taps = std::move(r.taps)](Node& self) {
    sample_backward_features(taps, self.grad, parent(self, 0).grad_buffer());
  });
}

Var bilinear_sample_differentiable(const Var& feature_map, const Var& points) {
  auto r = sample_forward(feature_map.value(), points.value());
  return make_node(std::move(r.out), {feature_map, points}, [taps = std::move(r.taps)](Node& self) {
    Node& fmap = parent(self, 0);
    Node& pts = parent(self, 1);
    if (fmap.requires_grad) sample_backward_features(taps, self.grad, fmap.grad_buffer());
    if (pts.requires_grad) {
      const std::size_t channels = fmap.value.dim(0), height = fmap.value.dim(1), width = fmap.value.dim(2);
      auto& gp = pts.grad_buffer();
      const double* f = fmap.value.data();
      for (std::size_t v = 0; v < taps.size(); ++v) {
        const SampleTap& t = taps[v];
        double gx = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const double* plane = f + c * height * width;
          const double f00 = plane[t.y0 * width + t.x0], f01 = plane[t.y0 * width + t.x1];
          const double f10 = plane[t.y1 * width + t.x0], f11 = plane[t.y1 * width + t.x1];
          const double go = self.grad.at(v, c);
          gx += go * ((1 - t.fy) * (f01 - f00) + t.fy * (f11 - f10));
          gy += go * ((1 - t.fx) * (f10 - f00) + t.fx * (f11 - f01));
        }
        gp.at(v, 0) += gx * t.dpx;
        gp.at(v, 1) += gy * t.dpy;
      }
    }
  });
}

}  // namespace cobra
