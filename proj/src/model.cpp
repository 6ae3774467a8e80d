#include "cobra/model.hpp"

#include <cmath>
#include <stdexcept>

namespace cobra {

namespace {

struct ConvSpec {
  std::string name;
  std::size_t in_channels, out_channels, stride;
};

// Strided stages until the feature stride is reached, stride-1 stages after
// that, then two same-resolution layers at the output width.
std::vector<ConvSpec> backbone_layers(const SnakeConfig& cfg) {
  std::vector<ConvSpec> layers;
  std::size_t channels = 1, reached = 1;
  for (std::size_t c : cfg.backbone_channels) {
    const std::size_t stride = reached < cfg.feature_stride ? 2 : 1;
    reached *= stride;
    layers.push_back({"backbone.conv" + std::to_string(layers.size()), channels, c, stride});
    channels = c;
  }
  for (int k = 0; k < 2; ++k) {
    layers.push_back({"backbone.conv" + std::to_string(layers.size()), channels, channels, 1});
  }
  return layers;
}

std::size_t head_input_channels(const SnakeConfig& cfg) {
  return cfg.feature_channels() + (cfg.use_coord_features ? 2 : 0);
}

std::string layer_name(const std::string& prefix, std::size_t i) { return prefix + ".layer" + std::to_string(i); }

DropoutMode dropout_mode(Mode mode) { return mode == Mode::kEval ? DropoutMode::kOff : DropoutMode::kOn; }

}  // namespace

void SnakeConfig::validate() const {
  if (vertices < 2) throw std::invalid_argument("SnakeConfig: vertices must be >= 2");
  if (iterations < 1) throw std::invalid_argument("SnakeConfig: iterations must be >= 1");
  if (dilations.empty()) throw std::invalid_argument("SnakeConfig: dilation schedule is empty");
  for (auto d : dilations) {
    if (d < 1) throw std::invalid_argument("SnakeConfig: dilations must be >= 1");
  }
  if (head_width < 1) throw std::invalid_argument("SnakeConfig: head_width must be >= 1");
  if (backbone_channels.empty()) throw std::invalid_argument("SnakeConfig: backbone_channels is empty");
  if (feature_stride < 1 || (feature_stride & (feature_stride - 1)) != 0) {
    throw std::invalid_argument("SnakeConfig: feature_stride must be a power of two");
  }
  if ((std::size_t{1} << backbone_channels.size()) < feature_stride) {
    throw std::invalid_argument("SnakeConfig: not enough backbone stages to reach feature_stride " +
                                std::to_string(feature_stride));
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("SnakeConfig: dropout_rate must lie in [0,1)");
  loss.validate();
}

std::string head_prefix(const SnakeConfig& cfg, std::size_t step) {
  return cfg.shared_weights ? std::string("head") : "head" + std::to_string(step);
}

std::map<std::string, Shape> param_shapes(const SnakeConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> shapes;
  for (const auto& l : backbone_layers(cfg)) {
    shapes[l.name + ".weight"] = {l.out_channels, l.in_channels, 3, 3};
    shapes[l.name + ".bias"] = {l.out_channels};
  }
  const std::size_t heads = cfg.shared_weights ? 1 : cfg.iterations;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string prefix = head_prefix(cfg, h);
    std::size_t in = head_input_channels(cfg);
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
      shapes[layer_name(prefix, i) + ".weight"] = {cfg.head_width, in, 3};
      shapes[layer_name(prefix, i) + ".bias"] = {cfg.head_width};
      in = cfg.head_width;
    }
    shapes[prefix + ".proj.weight"] = {2, cfg.head_width, 1};
    shapes[prefix + ".proj.bias"] = {2};
  }
  return shapes;
}

ModelParams init_params(const SnakeConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& [path, shape] : param_shapes(cfg)) {
    NdArray w(shape, 0.0);
    const bool is_weight = path.ends_with(".weight");
    const bool is_projection = path.find(".proj.") != std::string::npos;
    if (is_weight && !is_projection) {
      const std::size_t fan_in = shape_numel(shape) / shape[0];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : w.values()) v = dist(rng);
    }
    params.emplace(path, std::move(w));
  }
  return params;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [_, w] : params) n += w.size();
  return n;
}

std::size_t param_count(const ModelParams& params, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& [path, w] : params) {
    if (path.starts_with(prefix)) n += w.size();
  }
  return n;
}

void check_params(const ModelParams& params, const SnakeConfig& cfg) {
  const auto expected = param_shapes(cfg);
  for (const auto& [path, shape] : expected) {
    auto it = params.find(path);
    if (it == params.end()) throw std::invalid_argument("checkpoint is missing tensor '" + path + "'");
    if (it->second.shape() != shape) {
      throw std::invalid_argument("tensor '" + path + "' has shape " + shape_str(it->second.shape()) +
                                  ", config expects " + shape_str(shape));
    }
  }
  for (const auto& [path, _] : params) {
    if (!expected.contains(path)) throw std::invalid_argument("checkpoint has unexpected tensor '" + path + "'");
  }
}

BoundParams::BoundParams(const ModelParams& params, bool requires_grad) {
  for (const auto& [path, w] : params) vars_.emplace(path, requires_grad ? variable(w) : constant(w));
}

const Var& BoundParams::operator[](const std::string& path) const {
  auto it = vars_.find(path);
  if (it == vars_.end()) throw std::invalid_argument("no parameter named '" + path + "'");
  return it->second;
}

ModelParams BoundParams::grads() const {
  ModelParams out;
  for (const auto& [path, v] : vars_) out.emplace(path, v.grad());
  return out;
}

Var backbone_forward(const Var& image, const BoundParams& params, const SnakeConfig& cfg, Mode mode,
                     std::mt19937_64& rng) {
  if (image.value().rank() != 3 || image.shape()[0] != 1) {
    throw ShapeError("backbone_forward: image must be [1,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  if (h % cfg.feature_stride != 0 || w % cfg.feature_stride != 0) {
    throw ShapeError("backbone_forward: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by feature stride " + std::to_string(cfg.feature_stride));
  }
  Var x = image;
  for (const auto& l : backbone_layers(cfg)) {
    x = conv2d(x, params[l.name + ".weight"], l.stride, 1);
    x = add_channel_bias(x, params[l.name + ".bias"]);
    x = relu(x);
    x = dropout(x, cfg.dropout_rate, dropout_mode(mode), rng);
  }
  return x;
}

OffsetField SnakeStepResult::offset_field() const {
  OffsetField f;
  const auto& v = offsets.value();
  f.offsets.resize(v.dim(0));
  for (std::size_t i = 0; i < f.offsets.size(); ++i) f.offsets[i] = {v.at(i, 0), v.at(i, 1)};
  return f;
}

Polyline SnakeStepResult::polyline() const { return Polyline::from_array(contour.value()); }

SnakeStepResult snake_step(const Var& features, const Var& contour, const BoundParams& params,
                           const std::string& prefix, const SnakeConfig& cfg, Mode mode, std::mt19937_64& rng) {
  if (contour.value().rank() != 2 || contour.shape()[0] != cfg.vertices || contour.shape()[1] != 2) {
    throw ShapeError("snake_step: contour must be [" + std::to_string(cfg.vertices) + ",2], got " +
                     shape_str(contour.shape()));
  }
  const Var coords = cfg.gradient_stopping ? stop_gradient(contour) : contour;
  Var x = cfg.gradient_stopping ? bilinear_sample(features, coords.value())
                                : bilinear_sample_differentiable(features, coords);
  if (cfg.use_coord_features) x = concat_cols(x, coords);
  x = transpose2d(x);
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    const std::string name = layer_name(prefix, i);
    x = conv1d_dilated(x, params[name + ".weight"], cfg.dilations[i]);
    x = add_channel_bias(x, params[name + ".bias"]);
    x = relu(x);
    x = dropout(x, cfg.dropout_rate, dropout_mode(mode), rng);
  }
  x = conv1d_dilated(x, params[prefix + ".proj.weight"], 1);
  x = add_channel_bias(x, params[prefix + ".proj.bias"]);
  Var offsets = transpose2d(x);
  Var updated = apply_offsets(coords, offsets);
  return {std::move(offsets), std::move(updated)};
}

std::vector<Var> forward(const Var& image, const BoundParams& params, const SnakeConfig& cfg, Mode mode,
                         std::mt19937_64& rng) {
  const Var features = backbone_forward(image, params, cfg, mode, rng);
  Var contour = constant(init_contour(cfg.vertices).to_array());
  std::vector<Var> outputs;
  outputs.reserve(cfg.iterations);
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    contour = snake_step(features, contour, params, head_prefix(cfg, step), cfg, mode, rng).contour;
    outputs.push_back(contour);
  }
  return outputs;
}

std::vector<Polyline> predict(const NdArray& image, const ModelParams& params, const SnakeConfig& cfg, Mode mode,
                              std::uint64_t seed) {
  if (image.rank() != 2) throw ShapeError("predict: image must be [H,W], got " + shape_str(image.shape()));
  const BoundParams bound(params, false);
  std::mt19937_64 rng(seed);
  const auto contours = forward(constant(image.reshaped({1, image.dim(0), image.dim(1)})), bound, cfg, mode, rng);
  std::vector<Polyline> out;
  out.reserve(contours.size());
  for (const auto& c : contours) out.push_back(Polyline::from_array(c.value()));
  return out;
}

}  // namespace cobra
