#include <omp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"

#include "cobra/train.hpp"

using namespace cobra;

namespace {

SnakeConfig small_model() {
  SnakeConfig cfg;
  cfg.vertices = 16;
  cfg.iterations = 2;
  cfg.backbone_channels = {4, 8};
  cfg.head_width = 8;
  cfg.dilations = {1, 3, 1};
  return cfg;
}

std::vector<Scene> small_scenes(std::size_t count, std::uint64_t seed) {
  GenConfig gen;
  gen.size = 32;
  gen.count = count;
  gen.seed = seed;
  return generate_dataset(gen);
}

TrainConfig short_run(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 3;
  tc.seed = 5;
  tc.init_seed = 6;
  return tc;
}

}  // namespace

TEST_CASE("cosine_lr hand values") {
  CHECK(cosine_lr(0, 100, 1e-3, 4e-5) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, 1e-3, 4e-5) == doctest::Approx(4e-5).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 1e-3, 4e-5) == doctest::Approx(5.2e-4).epsilon(1e-12));
  CHECK(cosine_lr(25, 100, 1e-3, 4e-5) > cosine_lr(26, 100, 1e-3, 4e-5));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-3, 4e-5), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(101, 100, 1e-3, 4e-5), std::invalid_argument);
}

TEST_CASE("adam_step hand values") {
  const TrainConfig cfg;
  SUBCASE("zero gradient leaves params unchanged") {
    ModelParams p{{"w", NdArray({3}, {1.0, -2.0, 0.5})}};
    const ModelParams before = p;
    OptimState state;
    adam_step(p, {{"w", NdArray({3}, 0.0)}}, state, 1e-3, cfg);
    CHECK(p == before);
    CHECK(state.step == 1);
    CHECK(state.first_moment.at("w").shape() == Shape{3});
  }
  SUBCASE("first step moves by about lr") {
    ModelParams p{{"w", NdArray({1}, 0.0)}};
    OptimState state;
    adam_step(p, {{"w", NdArray({1}, 1.0)}}, state, 1e-3, cfg);
    // m_hat = 1, v_hat = 1: update = lr / (1 + eps).
    CHECK(p.at("w")[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("non-finite gradient names the parameter") {
    ModelParams p{{"head.proj.bias", NdArray({2}, 0.0)}};
    OptimState state;
    CHECK_THROWS_WITH_AS(adam_step(p, {{"head.proj.bias", NdArray({2}, {0.0, std::nan("")})}}, state, 1e-3, cfg),
                         doctest::Contains("head.proj.bias"), std::runtime_error);
    CHECK(state.step == 0);
  }
  SUBCASE("missing or misshapen gradient") {
    ModelParams p{{"w", NdArray({2}, 0.0)}};
    OptimState state;
    CHECK_THROWS_AS(adam_step(p, {}, state, 1e-3, cfg), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(p, {{"w", NdArray({3}, 0.0)}}, state, 1e-3, cfg), ShapeError);
  }
}

TEST_CASE("TrainConfig validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.lr_final = tc.lr_init;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("training_target is oriented and resampled") {
  const auto scenes = small_scenes(1, 1);
  Scene flipped = scenes[0];
  flipped.truth = flipped.truth.reversed();
  const SnakeConfig cfg = small_model();
  const Polyline t = training_target(flipped, cfg);
  CHECK(t.size() == 16);
  CHECK(t[0].y == 0.0);
  CHECK(t[15].y == 1.0);
  CHECK(training_target(scenes[0], cfg) == t);
}

TEST_CASE("one epoch on one scene gives a finite positive loss") {
  const auto scenes = small_scenes(1, 2);
  SnakeConfig cfg = small_model();
  cfg.loss.kind = LossKind::kL2;
  const TrainResult r = train(scenes, {}, cfg, short_run(1));
  REQUIRE(r.log.epochs.size() == 1);
  CHECK(std::isfinite(r.log.epochs[0].train_loss));
  CHECK(r.log.epochs[0].train_loss > 0.0);
  CHECK_FALSE(r.diverged);
  CHECK(r.best_epoch == 1);
  CHECK_THROWS_AS(train({}, {}, cfg, short_run(1)), std::invalid_argument);
}

TEST_CASE("training is deterministic and independent of the thread count") {
  const auto scenes = small_scenes(7, 3);
  const std::span<const Scene> all(scenes);
  const SnakeConfig cfg = small_model();
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const TrainResult a = train(all.subspan(0, 5), all.subspan(5), cfg, short_run(3));
  omp_set_num_threads(3);
  const TrainResult b = train(all.subspan(0, 5), all.subspan(5), cfg, short_run(3));
  omp_set_num_threads(saved);
  CHECK(a.last == b.last);
  CHECK(a.best == b.best);
  CHECK(a.log.to_csv() == b.log.to_csv());
  CHECK_FALSE(a.last == init_params(cfg, 6));

  TrainConfig other = short_run(3);
  other.seed = 99;
  CHECK_FALSE(train(all.subspan(0, 5), all.subspan(5), cfg, other).last == a.last);
}

TEST_CASE("best checkpoint tracks the lowest validation polis") {
  const auto scenes = small_scenes(8, 4);
  const std::span<const Scene> all(scenes);
  std::vector<ModelParams> seen;
  const TrainResult r = train(all.subspan(0, 6), all.subspan(6), small_model(), short_run(4),
                              [&](const EpochLog&, const ModelParams& current, const ModelParams&) { seen.push_back(current); });
  REQUIRE(seen.size() == 4);
  std::size_t best = 0;
  for (std::size_t e = 0; e < 4; ++e) {
    if (r.log.epochs[e].val_polis_px < r.log.epochs[best].val_polis_px) best = e;
  }
  CHECK(r.best_epoch == best + 1);
  CHECK(r.best == seen[best]);
  CHECK(r.last == seen.back());
  const std::string csv = r.log.to_csv();
  CHECK(csv.rfind("epoch,train_loss,val_polis_px,lr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("non-finite loss aborts with the last good parameters") {
  auto scenes = small_scenes(4, 5);
  scenes[2].image[10] = std::numeric_limits<double>::quiet_NaN();
  const TrainResult r = train(scenes, {}, small_model(), short_run(3));
  CHECK(r.diverged);
  CHECK(r.message.find("non-finite") != std::string::npos);
  CHECK(r.log.epochs.empty());
  for (const auto& [_, w] : r.best) {
    for (double v : w.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("checkpoint round-trip preserves validation polis") {
  const auto scenes = small_scenes(6, 6);
  const std::span<const Scene> all(scenes);
  const SnakeConfig cfg = small_model();
  const TrainResult r = train(all.subspan(0, 4), all.subspan(4), cfg, short_run(2));
  const auto file = std::filesystem::temp_directory_path() / "cobra_test_train.ckpt";
  save_checkpoint(file, r.best);
  const ModelParams loaded = load_checkpoint(file);
  std::filesystem::remove(file);
  const double before = evaluate(all.subspan(4), r.best, cfg).mean_polis_px();
  CHECK(std::abs(evaluate(all.subspan(4), loaded, cfg).mean_polis_px() - before) <= 1e-12);
}

TEST_CASE("evaluate reports pixels as normalized polis times W-1") {
  const auto scenes = small_scenes(3, 7);
  const SnakeConfig cfg = small_model();
  const ModelParams params = init_params(cfg, 1);
  const EvalReport report = evaluate(scenes, params, cfg);
  REQUIRE(report.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(report.rows[i].scene_id == scenes[i].id);
    const double expected = polis(init_contour(16), scenes[i].truth);
    CHECK(report.rows[i].polis_norm == doctest::Approx(expected).epsilon(1e-12));
    CHECK(report.rows[i].polis_px == doctest::Approx(expected * 31.0).epsilon(1e-12));
    CHECK(polis_px(init_contour(16), scenes[i]) == report.rows[i].polis_px);
  }
  const EvalReport halved = evaluate(scenes, params, cfg, true);
  CHECK(halved.rows[0].polis_norm == doctest::Approx(report.rows[0].polis_norm / 2).epsilon(1e-12));
}

TEST_CASE("mc_predict contract") {
  const auto scenes = small_scenes(2, 8);
  const SnakeConfig cfg = small_model();
  const TrainResult r = train(scenes, {}, cfg, short_run(2));
  const NdArray& image = scenes[0].image;

  const McResult none = mc_predict(image, r.last, cfg, 5, 0.0, 3);
  CHECK(none.uncertainty == 0.0);
  for (const auto& s : none.samples) CHECK(s == none.deterministic);

  const McResult a = mc_predict(image, r.last, cfg, 10, 0.2, 3);
  const McResult b = mc_predict(image, r.last, cfg, 10, 0.2, 3);
  CHECK(a.samples.size() == 10);
  CHECK(a.samples == b.samples);
  CHECK(a.uncertainty == b.uncertainty);
  CHECK(a.uncertainty > 0.0);
  CHECK(a.deterministic == predict(image, r.last, cfg, Mode::kEval, 0).back());
  CHECK_THROWS_AS(mc_predict(image, r.last, cfg, 0, 0.2, 3), std::invalid_argument);

  const EvalReport report = evaluate_uncertainty(scenes, r.last, cfg, 4, 0.2, 1);
  for (const auto& row : report.rows) {
    REQUIRE(row.uncertainty.has_value());
    CHECK(*row.uncertainty >= 0.0);
  }
  const EvalReport zero = evaluate_uncertainty(scenes, r.last, cfg, 4, 0.0, 1);
  for (const auto& row : zero.rows) CHECK(*row.uncertainty == 0.0);
  CHECK_FALSE(zero.uncertainty_pearson().has_value());
}

TEST_CASE("early training loss trends down on the default generator") {
  // Default model and scenes, 40 of them; median of the first five epoch
  // losses must sit below the first epoch's loss.
  GenConfig gen;
  gen.count = 40;
  gen.seed = 77;
  const auto scenes = generate_dataset(gen);
  TrainConfig tc;
  tc.epochs = 5;
  const TrainResult r = train(scenes, {}, SnakeConfig{}, tc);
  REQUIRE(r.log.epochs.size() == 5);
  std::vector<double> losses;
  for (const auto& e : r.log.epochs) {
    CHECK(std::isfinite(e.train_loss));
    losses.push_back(e.train_loss);
  }
  std::vector<double> sorted = losses;
  std::nth_element(sorted.begin(), sorted.begin() + 2, sorted.end());
  CHECK(sorted[2] < losses[0]);
  CHECK(losses[4] < losses[0]);
}
