#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cobra/geometry.hpp"
#include "cobra/losses.hpp"
#include "cobra/tensor.hpp"

namespace cobra {

struct SnakeConfig {
  std::size_t vertices = 64;
  std::size_t iterations = 4;
  std::vector<std::size_t> dilations{1, 3, 9, 9, 3, 1};
  std::size_t head_width = 64;
  std::vector<std::size_t> backbone_channels{16, 32, 64};
  std::size_t feature_stride = 4;
  double dropout_rate = 0.2;
  bool use_coord_features = true;
  bool gradient_stopping = true;
  bool shared_weights = true;
  bool deep_supervision = true;
  LossConfig loss;

  void validate() const;
  std::size_t feature_channels() const { return backbone_channels.back(); }
};

enum class Mode { kTrain, kEval, kMc };

/// Learnable weights keyed by layer path; std::map keeps lexicographic order.
using ModelParams = std::map<std::string, NdArray>;

/// Expected parameter shapes for a config, keyed like ModelParams.
std::map<std::string, Shape> param_shapes(const SnakeConfig& cfg);

/// He fan-in normal weights, zero biases, zero final offset projection.
ModelParams init_params(const SnakeConfig& cfg, std::uint64_t seed);

std::size_t param_count(const ModelParams& params);
/// Number of scalars under a path prefix, e.g. "head".
std::size_t param_count(const ModelParams& params, const std::string& prefix);

/// Throws naming the first tensor whose presence or shape disagrees with cfg.
void check_params(const ModelParams& params, const SnakeConfig& cfg);

/// Graph leaves for one forward pass.
class BoundParams {
 public:
  BoundParams(const ModelParams& params, bool requires_grad);
  const Var& operator[](const std::string& path) const;
  /// Gradients of every leaf, in path order.
  ModelParams grads() const;

 private:
  std::map<std::string, Var> vars_;
};

/// image [1,H,W] -> features [C,H/s,W/s].
Var backbone_forward(const Var& image, const BoundParams& params, const SnakeConfig& cfg, Mode mode,
                     std::mt19937_64& rng);

struct SnakeStepResult {
  Var offsets;  // [V,2]
  Var contour;  // [V,2]

  OffsetField offset_field() const;
  Polyline polyline() const;
};

/// One Snake Head application using the head parameters under `head_prefix`.
SnakeStepResult snake_step(const Var& features, const Var& contour, const BoundParams& params,
                           const std::string& head_prefix, const SnakeConfig& cfg, Mode mode,
                           std::mt19937_64& rng);

/// Parameter prefix of the head used at iteration `step` (0-based).
std::string head_prefix(const SnakeConfig& cfg, std::size_t step);

/// Backbone once, then cfg.iterations snake steps from init_contour.
/// Returns every iteration's contour [V,2]; the last one is the prediction.
std::vector<Var> forward(const Var& image, const BoundParams& params, const SnakeConfig& cfg, Mode mode,
                         std::mt19937_64& rng);

/// Convenience: forward without gradients, image given as [H,W].
std::vector<Polyline> predict(const NdArray& image, const ModelParams& params, const SnakeConfig& cfg, Mode mode,
                              std::uint64_t seed);

// Checkpoint files: "COBRACKPT1", u32 tensor count, then per tensor in path
// order: u32 path length, path bytes, u32 rank, u32 dims, f64 values; all
// little-endian.
void save_checkpoint(const std::filesystem::path& file, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& file);

}  // namespace cobra
