// cobra: generate synthetic scenes, train, predict, evaluate, score
// uncertainty and run ablation sweeps.

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cobra/data.hpp"
#include "cobra/metrics.hpp"
#include "cobra/model.hpp"
#include "cobra/render.hpp"
#include "cobra/run_config.hpp"
#include "cobra/train.hpp"

namespace fs = std::filesystem;
using namespace cobra;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".cfg"); }

// Explicit --config wins, then the sidecar written next to the checkpoint,
// then defaults.
RunConfig resolve_config(const std::string& config, const fs::path& ckpt) {
  if (!config.empty()) return RunConfig::load(config);
  if (!ckpt.empty() && fs::exists(sidecar(ckpt))) return RunConfig::load(sidecar(ckpt));
  return RunConfig{};
}

ModelParams load_checked(const fs::path& ckpt, const SnakeConfig& cfg) {
  ModelParams params = load_checkpoint(ckpt);
  check_params(params, cfg);
  return params;
}

std::vector<Scene> select(const std::vector<Scene>& scenes, const std::vector<std::size_t>& idx) {
  std::vector<Scene> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(scenes[i]);
  return out;
}

std::vector<Scene> split_part(const Dataset& ds, const RunConfig& cfg, const std::string& part) {
  if (part == "all") return ds.scenes;
  const Split s = make_split(ds.scenes.size(), cfg.split.fractions, cfg.split.seed);
  if (part == "train") return select(ds.scenes, s.train);
  if (part == "val") return select(ds.scenes, s.val);
  if (part == "test") return select(ds.scenes, s.test);
  throw UsageError("--split must be one of train, val, test, all");
}

std::string feature_collection(const std::vector<Polyline>& lines, std::size_t h, std::size_t w) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t k = 0; k < lines.size(); ++k) {
    nlohmann::json coords = nlohmann::json::array();
    for (const auto& p : lines[k].vertices()) {
      coords.push_back({p.x * static_cast<double>(w - 1), p.y * static_cast<double>(h - 1)});
    }
    features.push_back({{"type", "Feature"},
                        {"properties", {{"iteration", k + 1}}},
                        {"geometry", {{"type", "LineString"}, {"coordinates", coords}}}});
  }
  return nlohmann::json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) + "\n";
}


TrainResult run_training(const Dataset& ds, const RunConfig& cfg, const fs::path& ckpt_out) {
  const Split s = make_split(ds.scenes.size(), cfg.split.fractions, cfg.split.seed);
  const auto train_set = select(ds.scenes, s.train);
  const auto val_set = select(ds.scenes, s.val);
  auto on_epoch = [&](const EpochLog& row, const ModelParams& current, const ModelParams&) {
    std::fprintf(stderr, "epoch %zu  loss %.6g  val_polis_px %.4f  lr %.3g\n", row.epoch, row.train_loss,
                 row.val_polis_px, row.lr);
    if (cfg.train.checkpoint_interval > 0 && row.epoch % cfg.train.checkpoint_interval == 0) {
      save_checkpoint(ckpt_out.string() + ".last", current);
    }
  };
  return train(train_set, val_set, cfg.snake, cfg.train, on_epoch);
}

// --- subcommands ----------------------------------------------------------

struct GenerateArgs {
  std::string out;
  std::size_t count = 0;
  std::size_t size = 0;
  std::uint64_t seed = 0;
  bool speckle = false;
  bool force = false;
  std::string config;
};

int cmd_generate(const GenerateArgs& a, const CLI::App& app) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  GenConfig& gen = cfg.gen;
  if (app.count("--count")) gen.count = a.count;
  if (app.count("--size")) gen.size = a.size;
  if (app.count("--seed")) gen.seed = a.seed;
  if (a.speckle) gen.speckle = true;
  gen.validate(cfg.snake.feature_stride);
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!a.force) throw UsageError("output directory " + out.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  write_dataset(out, generate_dataset(gen), gen);
  std::fprintf(stderr, "wrote %zu scenes to %s\n", gen.count, out.string().c_str());
  return 0;
}

struct TrainArgs {
  std::string data, config, out, log;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  const Dataset ds = read_dataset(a.data);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const TrainResult r = run_training(ds, cfg, out);
  save_checkpoint(out, r.best);
  cfg.save(sidecar(out));
  if (!a.log.empty()) write_text(a.log, r.log.to_csv());
  if (r.diverged) throw std::runtime_error("training diverged (" + r.message + "); last good checkpoint written to " + out.string());
  return 0;
}

struct PredictArgs {
  std::string ckpt, image, out, svg, iterations_out, config, truth;
};

int cmd_predict(const PredictArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.ckpt);
  const ModelParams params = load_checked(a.ckpt, cfg.snake);
  const NdArray image = read_pgm(a.image);
  if (image.dim(0) % cfg.snake.feature_stride || image.dim(1) % cfg.snake.feature_stride) {
    throw UsageError("image size is not divisible by the feature stride " + std::to_string(cfg.snake.feature_stride));
  }
  const auto contours = predict(image, params, cfg.snake, Mode::kEval, 0);
  const std::size_t h = image.dim(0), w = image.dim(1);
  write_text(a.out, polyline_geojson(contours.back(), h, w, fs::path(a.image).stem().string()));
  if (!a.iterations_out.empty()) write_text(a.iterations_out, feature_collection(contours, h, w));
  if (!a.svg.empty()) {
    std::optional<Polyline> truth;
    if (!a.truth.empty()) truth = parse_polyline_geojson(read_text(a.truth), h, w);
    const std::vector<Polyline> intermediates(contours.begin(), contours.end() - 1);
    write_text(a.svg, svg_overlay(image, truth, contours.back(), intermediates));
  }
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "test", out, config;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.ckpt);
  const ModelParams params = load_checked(a.ckpt, cfg.snake);
  const Dataset ds = read_dataset(a.data);
  const auto scenes = split_part(ds, cfg, a.split);
  const EvalReport report = evaluate(scenes, params, cfg.snake, cfg.polis_halved);
  report.write_csv(a.out);
  std::fprintf(stderr, "mean polis %.4f px over %zu scenes\n", report.mean_polis_px(), report.rows.size());
  return 0;
}

struct UncertaintyArgs {
  std::string ckpt, data, split = "test", out, config;
  std::size_t samples = 10;
  double dropout = 0.2;
  std::uint64_t seed = 0;
};

int cmd_uncertainty(const UncertaintyArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.ckpt);
  const ModelParams params = load_checked(a.ckpt, cfg.snake);
  const Dataset ds = read_dataset(a.data);
  const auto scenes = split_part(ds, cfg, a.split);
  if (scenes.size() < 2) throw std::runtime_error("Pearson correlation is undefined for fewer than 2 scenes");
  const EvalReport report =
      evaluate_uncertainty(scenes, params, cfg.snake, a.samples, a.dropout, a.seed, cfg.polis_halved);
  report.write_csv(a.out);
  const auto r = report.uncertainty_pearson();
  std::fprintf(stderr, "pearson r = %s\n", r ? std::to_string(*r).c_str() : "undefined");
  return 0;
}

struct AblateArgs {
  std::string data, config, axis, out;
};

std::vector<std::pair<std::string, RunConfig>> ablation_runs(const RunConfig& base, const std::string& axis) {
  std::vector<std::pair<std::string, RunConfig>> runs;
  auto add = [&](const std::string& label, auto&& edit) {
    RunConfig c = base;
    edit(c);
    runs.emplace_back(label, c);
  };
  if (axis == "loss") {
    for (auto kind : {LossKind::kL1, LossKind::kL2, LossKind::kDtw, LossKind::kSoftDtw}) {
      add(to_string(kind), [kind](RunConfig& c) { c.snake.loss.kind = kind; });
    }
  } else if (axis == "vertices") {
    for (std::size_t v : {16, 32, 64, 128, 256}) add(std::to_string(v), [v](RunConfig& c) { c.snake.vertices = v; });
  } else if (axis == "iterations") {
    for (std::size_t t = 2; t <= 7; ++t) add(std::to_string(t), [t](RunConfig& c) { c.snake.iterations = t; });
  } else {
    bool SnakeConfig::*flag = nullptr;
    if (axis == "coord") flag = &SnakeConfig::use_coord_features;
    if (axis == "gradstop") flag = &SnakeConfig::gradient_stopping;
    if (axis == "deepsup") flag = &SnakeConfig::deep_supervision;
    if (axis == "shared") flag = &SnakeConfig::shared_weights;
    if (!flag) throw UsageError("--axis must be one of loss, vertices, iterations, coord, gradstop, deepsup, shared");
    for (bool on : {true, false}) add(on ? "on" : "off", [flag, on](RunConfig& c) { c.snake.*flag = on; });
  }
  return runs;
}

int cmd_ablate(const AblateArgs& a) {
  const RunConfig base = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  const auto runs = ablation_runs(base, a.axis);
  const Dataset ds = read_dataset(a.data);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::string summary = "axis,value,test_polis_px,diverged\n";
  for (const auto& [label, cfg] : runs) {
    const fs::path run_dir = out / (a.axis + "_" + label);
    fs::create_directories(run_dir);
    std::fprintf(stderr, "== %s = %s\n", a.axis.c_str(), label.c_str());
    const TrainResult r = run_training(ds, cfg, run_dir / "model.ckpt");
    save_checkpoint(run_dir / "model.ckpt", r.best);
    cfg.save(sidecar(run_dir / "model.ckpt"));
    write_text(run_dir / "train_log.csv", r.log.to_csv());
    const EvalReport report = evaluate(split_part(ds, cfg, "test"), r.best, cfg.snake, cfg.polis_halved);
    report.write_csv(run_dir / "test_eval.csv");
    char row[160];
    std::snprintf(row, sizeof(row), "%s,%s,%.17g,%s\n", a.axis.c_str(), label.c_str(), report.mean_polis_px(),
                  r.diverged ? "true" : "false");
    summary += row;
  }
  write_text(out / "summary.csv", summary);
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("COBRA_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) omp_set_num_threads(n);
  }

  CLI::App app{"cobra: deep active contour delineation of boundary polylines"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset (PGM images + GeoJSON truth + index.json)");
  generate->add_option("--out", gen.out, "Output dataset directory")->required();
  generate->add_option("--count", gen.count, "Number of scenes (default from config: 500)");
  generate->add_option("--size", gen.size, "Image side length in pixels (default from config: 128)");
  generate->add_option("--seed", gen.seed, "Generator seed");
  generate->add_flag("--speckle", gen.speckle, "Multiply by unit-mean speckle noise");
  generate->add_flag("--force", gen.force, "Overwrite a non-empty output directory");
  generate->add_option("--config", gen.config, "key=value config file for the remaining generator settings");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset's train split");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--config", tr.config, "key=value config file");
  train_cmd->add_option("--out", tr.out, "Checkpoint to write (the config is stored next to it as <out>.cfg)")->required();
  train_cmd->add_option("--log", tr.log, "Training log CSV");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Delineate the front in one image");
  predict_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint")->required();
  predict_cmd->add_option("--image", pr.image, "Input PGM image")->required();
  predict_cmd->add_option("--out", pr.out, "Output GeoJSON LineString (pixel coordinates)")->required();
  predict_cmd->add_option("--svg", pr.svg, "Optional SVG overlay");
  predict_cmd->add_option("--iterations-out", pr.iterations_out, "Optional GeoJSON FeatureCollection of every iteration");
  predict_cmd->add_option("--truth", pr.truth, "Optional truth GeoJSON drawn in the SVG overlay");
  predict_cmd->add_option("--config", pr.config, "Config file (default: <ckpt>.cfg if present)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Polis evaluation on a dataset split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "train, val, test or all");
  eval_cmd->add_option("--out", ev.out, "Report CSV")->required();
  eval_cmd->add_option("--config", ev.config, "Config file (default: <ckpt>.cfg if present)");

  UncertaintyArgs un;
  auto* unc_cmd = app.add_subcommand("uncertainty", "MC-dropout uncertainty and its correlation with the error");
  unc_cmd->add_option("--ckpt", un.ckpt, "Checkpoint")->required();
  unc_cmd->add_option("--data", un.data, "Dataset directory")->required();
  unc_cmd->add_option("--split", un.split, "train, val, test or all");
  unc_cmd->add_option("--samples", un.samples, "MC samples per scene")->check(CLI::PositiveNumber);
  unc_cmd->add_option("--dropout", un.dropout, "Dropout rate at inference")->check(CLI::Range(0.0, 0.999999));
  unc_cmd->add_option("--seed", un.seed, "Sampling seed");
  unc_cmd->add_option("--out", un.out, "Report CSV")->required();
  unc_cmd->add_option("--config", un.config, "Config file (default: <ckpt>.cfg if present)");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Retrain and evaluate along one ablation axis");
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required();
  ablate_cmd->add_option("--config", ab.config, "Base config file");
  ablate_cmd->add_option("--axis", ab.axis, "loss, vertices, iterations, coord, gradstop, deepsup or shared")->required();
  ablate_cmd->add_option("--out", ab.out, "Output directory (summary.csv plus one folder per run)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (generate->parsed()) return cmd_generate(gen, *generate);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (predict_cmd->parsed()) return cmd_predict(pr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (unc_cmd->parsed()) return cmd_uncertainty(un);
    if (ablate_cmd->parsed()) return cmd_ablate(ab);
  } catch (const UsageError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}
