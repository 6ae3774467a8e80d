#include "cobra/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cobra {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(lr_final < lr_init)) throw std::invalid_argument("TrainConfig: lr_final must be below lr_init");
  if (!(lr_final >= 0.0)) throw std::invalid_argument("TrainConfig: lr_final must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be > 0");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_init, double lr_final) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond total_steps");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimState& state, double lr, const TrainConfig& cfg) {
  for (const auto& [path, g] : grads) {
    for (double v : g.values()) {
      if (!std::isfinite(v)) throw std::runtime_error("adam_step: non-finite gradient in '" + path + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [path, w] : params) {
    auto git = grads.find(path);
    if (git == grads.end()) throw std::invalid_argument("adam_step: no gradient for '" + path + "'");
    const NdArray& g = git->second;
    if (g.shape() != w.shape()) throw ShapeError("adam_step: gradient shape mismatch for '" + path + "'");
    auto [mit, m_new] = state.first_moment.try_emplace(path, w.shape(), 0.0);
    auto [vit, v_new] = state.second_moment.try_emplace(path, w.shape(), 0.0);
    NdArray& m = mit->second;
    NdArray& v = vit->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

Polyline training_target(const Scene& scene, const SnakeConfig& cfg) {
  return resample(orient_top_to_bottom(scene.truth), cfg.vertices);
}

SceneGradient scene_gradient(const Scene& scene, const Polyline& target, const ModelParams& params,
                             const SnakeConfig& cfg, Mode mode, std::uint64_t seed) {
  const BoundParams bound(params, true);
  std::mt19937_64 rng(seed);
  const Var image = constant(scene.image.reshaped({1, scene.image.dim(0), scene.image.dim(1)}));
  const auto contours = forward(image, bound, cfg, mode, rng);
  const Var loss = cfg.deep_supervision ? deep_supervision_loss(contours, target, cfg.loss)
                                        : contour_loss(contours.back(), target, cfg.loss);
  SceneGradient out;
  out.loss = loss.value()[0];
  if (std::isfinite(out.loss)) {
    backward(loss);
    out.grads = bound.grads();
  }
  return out;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_polis_px,lr\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_polis_px, e.lr);
    os << buf;
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << to_csv();
}

double polis_px(const Polyline& prediction, const Scene& scene, bool halved) {
  return polis(prediction, scene.truth, halved) * static_cast<double>(scene.image.dim(1) - 1);
}

namespace {

double mean_val_polis(std::span<const Scene> scenes, const ModelParams& params, const SnakeConfig& cfg) {
  if (scenes.empty()) return std::numeric_limits<double>::quiet_NaN();
  return evaluate(scenes, params, cfg).mean_polis_px();
}

}  // namespace

TrainResult train(std::span<const Scene> train_set, std::span<const Scene> val_set, const SnakeConfig& snake_cfg,
                  const TrainConfig& train_cfg, const EpochCallback& on_epoch) {
  snake_cfg.validate();
  train_cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");

  std::vector<Polyline> targets;
  targets.reserve(train_set.size());
  for (const auto& s : train_set) targets.push_back(training_target(s, snake_cfg));

  TrainResult result;
  ModelParams params = init_params(snake_cfg, train_cfg.init_seed);
  result.best = params;
  double best_val = std::numeric_limits<double>::infinity();
  OptimState state;

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + train_cfg.batch_size - 1) / train_cfg.batch_size;
  const std::size_t total_steps = batches * train_cfg.epochs;
  std::mt19937_64 shuffle_rng(derive_seed(train_cfg.seed, 0x5eed));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog row;
    row.epoch = epoch;
    row.lr = cosine_lr(step, total_steps, train_cfg.lr_init, train_cfg.lr_final);
    double loss_sum = 0.0;

    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t begin = b * train_cfg.batch_size;
      const std::size_t count = std::min(train_cfg.batch_size, n - begin);
      std::vector<SceneGradient> parts(count);
#pragma omp parallel for schedule(dynamic)
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = order[begin + k];
        parts[k] = scene_gradient(train_set[idx], targets[idx], params, snake_cfg, Mode::kTrain,
                                  derive_seed(train_cfg.seed, step, idx));
      }
      // Reduction in batch order keeps results independent of the thread count.
      ModelParams grads;
      double batch_loss = 0.0;
      bool finite = true;
      for (auto& p : parts) {
        batch_loss += p.loss;
        if (!std::isfinite(p.loss)) {
          finite = false;
          break;
        }
        if (grads.empty()) {
          grads = std::move(p.grads);
        } else {
          for (auto& [path, g] : grads) g.add_inplace(p.grads.at(path));
        }
      }
      if (!finite) {
        result.diverged = true;
        result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
        break;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [_, g] : grads) {
        for (auto& v : g.values()) v *= inv;
      }
      try {
        adam_step(params, grads, state, cosine_lr(step, total_steps, train_cfg.lr_init, train_cfg.lr_final), train_cfg);
      } catch (const std::runtime_error& e) {
        result.diverged = true;
        result.message = e.what();
        break;
      }
      loss_sum += batch_loss;
    }
    if (result.diverged) break;

    row.train_loss = loss_sum / static_cast<double>(n);
    row.val_polis_px = mean_val_polis(val_set, params, snake_cfg);
    if (val_set.empty() || row.val_polis_px < best_val) {
      best_val = val_set.empty() ? best_val : row.val_polis_px;
      result.best = params;
      result.best_epoch = epoch;
    }
    result.log.epochs.push_back(row);
    if (on_epoch) on_epoch(row, params, result.best);
  }
  result.last = std::move(params);
  return result;
}

EvalReport evaluate(std::span<const Scene> scenes, const ModelParams& params, const SnakeConfig& cfg,
                    bool polis_halved) {
  EvalReport report;
  report.rows.resize(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Polyline pred = predict(scenes[i].image, params, cfg, Mode::kEval, 0).back();
    EvalRow& row = report.rows[i];
    row.scene_id = scenes[i].id;
    row.polis_norm = polis(pred, scenes[i].truth, polis_halved);
    row.polis_px = row.polis_norm * static_cast<double>(scenes[i].image.dim(1) - 1);
  }
  report.sort_rows();
  return report;
}

McResult mc_predict(const NdArray& image, const ModelParams& params, const SnakeConfig& cfg, std::size_t samples,
                    double dropout_rate, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("mc_predict: need at least one sample");
  SnakeConfig mc_cfg = cfg;
  mc_cfg.dropout_rate = dropout_rate;
  mc_cfg.validate();
  McResult out;
  out.deterministic = predict(image, params, cfg, Mode::kEval, seed).back();
  double total = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    out.samples.push_back(predict(image, params, mc_cfg, Mode::kMc, derive_seed(seed, k)).back());
    total += polis(out.samples.back(), out.deterministic);
  }
  out.uncertainty = total / static_cast<double>(samples);
  return out;
}

EvalReport evaluate_uncertainty(std::span<const Scene> scenes, const ModelParams& params, const SnakeConfig& cfg,
                                std::size_t samples, double dropout_rate, std::uint64_t seed, bool polis_halved) {
  EvalReport report;
  report.rows.resize(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const McResult mc = mc_predict(scenes[i].image, params, cfg, samples, dropout_rate, derive_seed(seed, i));
    const double span = static_cast<double>(scenes[i].image.dim(1) - 1);
    EvalRow& row = report.rows[i];
    row.scene_id = scenes[i].id;
    row.polis_norm = polis(mc.deterministic, scenes[i].truth, polis_halved);
    row.polis_px = row.polis_norm * span;
    row.uncertainty = mc.uncertainty * span;
  }
  report.sort_rows();
  return report;
}

}  // namespace cobra
