#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cobra/data.hpp"
#include "cobra/metrics.hpp"
#include "cobra/model.hpp"

namespace cobra {

struct TrainConfig {
  std::size_t epochs = 60;
  double lr_init = 1e-3;
  double lr_final = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;       // shuffling and dropout masks
  std::uint64_t init_seed = 0;  // parameter initialization
  std::size_t checkpoint_interval = 0;  // epochs between checkpoints, 0 = off

  void validate() const;
};

struct OptimState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;
};

/// splitmix64-style mixing for per-scene / per-sample seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_init, double lr_final);

/// Bias-corrected Adam. Throws naming the parameter path on a non-finite gradient.
void adam_step(ModelParams& params, const ModelParams& grads, OptimState& state, double lr, const TrainConfig& cfg);

/// Truth resampled to cfg.vertices, ordered top to bottom.
Polyline training_target(const Scene& scene, const SnakeConfig& cfg);

struct SceneGradient {
  double loss = 0.0;
  ModelParams grads;
};

/// Train-mode forward, configured loss (deep supervision when enabled), backward.
SceneGradient scene_gradient(const Scene& scene, const Polyline& target, const ModelParams& params,
                             const SnakeConfig& cfg, Mode mode, std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_polis_px = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;

  /// `epoch,train_loss,val_polis_px,lr`
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& file) const;
};

struct TrainResult {
  ModelParams best;  // lowest validation polis (last good params when there is no validation set)
  ModelParams last;  // params after the last completed step
  TrainLog log;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(const EpochLog&, const ModelParams& current, const ModelParams& best)>;

TrainResult train(std::span<const Scene> train_set, std::span<const Scene> val_set, const SnakeConfig& snake_cfg,
                  const TrainConfig& train_cfg, const EpochCallback& on_epoch = {});

/// Polis between a prediction and the scene truth, in pixels (normalized
/// units times the pixel span W-1).
double polis_px(const Polyline& prediction, const Scene& scene, bool halved = false);

/// Eval-mode prediction on every scene.
EvalReport evaluate(std::span<const Scene> scenes, const ModelParams& params, const SnakeConfig& cfg,
                    bool polis_halved = false);

struct McResult {
  Polyline deterministic;
  std::vector<Polyline> samples;
  double uncertainty = 0.0;  // mean polis of the samples to the deterministic prediction, normalized units
};

McResult mc_predict(const NdArray& image, const ModelParams& params, const SnakeConfig& cfg, std::size_t samples,
                    double dropout_rate, std::uint64_t seed);

/// Per-scene uncertainty and error; uncertainty is reported in pixels.
EvalReport evaluate_uncertainty(std::span<const Scene> scenes, const ModelParams& params, const SnakeConfig& cfg,
                                std::size_t samples, double dropout_rate, std::uint64_t seed,
                                bool polis_halved = false);

}  // namespace cobra
