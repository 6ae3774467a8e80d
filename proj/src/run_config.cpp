#include "cobra/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cobra {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_uint(key, trim(item)));
  if (out.empty()) throw std::invalid_argument("config: '" + key + "' expects a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field uint_field(T RunConfig::*section, auto member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = static_cast<std::remove_reference_t<decltype((c.*section).*member)>>(to_uint(k, v));
          },
          [=](const RunConfig& c) { return std::to_string((c.*section).*member); }};
}

template <typename T>
Field double_field(T RunConfig::*section, double T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_double(k, v); },
          [=](const RunConfig& c) { return fmt((c.*section).*member); }};
}

template <typename T>
Field bool_field(T RunConfig::*section, bool T::*member) {
  return {[=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_bool(k, v); },
          [=](const RunConfig& c) { return fmt((c.*section).*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    using S = SnakeConfig;
    using Tr = TrainConfig;
    using G = GenConfig;
    t["snake.vertices"] = uint_field(&RunConfig::snake, &S::vertices);
    t["snake.iterations"] = uint_field(&RunConfig::snake, &S::iterations);
    t["snake.dilations"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.snake.dilations = to_list(k, v); },
                            [](const RunConfig& c) { return fmt(c.snake.dilations); }};
    t["snake.head_width"] = uint_field(&RunConfig::snake, &S::head_width);
    t["snake.backbone_channels"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.snake.backbone_channels = to_list(k, v); },
        [](const RunConfig& c) { return fmt(c.snake.backbone_channels); }};
    t["snake.feature_stride"] = uint_field(&RunConfig::snake, &S::feature_stride);
    t["snake.dropout_rate"] = double_field(&RunConfig::snake, &S::dropout_rate);
    t["snake.use_coord_features"] = bool_field(&RunConfig::snake, &S::use_coord_features);
    t["snake.gradient_stopping"] = bool_field(&RunConfig::snake, &S::gradient_stopping);
    t["snake.shared_weights"] = bool_field(&RunConfig::snake, &S::shared_weights);
    t["snake.deep_supervision"] = bool_field(&RunConfig::snake, &S::deep_supervision);
    t["loss.kind"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.snake.loss.kind = parse_loss_kind(v); },
                      [](const RunConfig& c) { return to_string(c.snake.loss.kind); }};
    t["loss.gamma"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.snake.loss.gamma = to_double(k, v); },
                       [](const RunConfig& c) { return fmt(c.snake.loss.gamma); }};
    t["train.epochs"] = uint_field(&RunConfig::train, &Tr::epochs);
    t["train.lr_init"] = double_field(&RunConfig::train, &Tr::lr_init);
    t["train.lr_final"] = double_field(&RunConfig::train, &Tr::lr_final);
    t["train.beta1"] = double_field(&RunConfig::train, &Tr::beta1);
    t["train.beta2"] = double_field(&RunConfig::train, &Tr::beta2);
    t["train.eps"] = double_field(&RunConfig::train, &Tr::eps);
    t["train.batch_size"] = uint_field(&RunConfig::train, &Tr::batch_size);
    t["train.seed"] = uint_field(&RunConfig::train, &Tr::seed);
    t["train.init_seed"] = uint_field(&RunConfig::train, &Tr::init_seed);
    t["train.checkpoint_interval"] = uint_field(&RunConfig::train, &Tr::checkpoint_interval);
    t["gen.size"] = uint_field(&RunConfig::gen, &G::size);
    t["gen.count"] = uint_field(&RunConfig::gen, &G::count);
    t["gen.seed"] = uint_field(&RunConfig::gen, &G::seed);
    t["gen.roughness"] = double_field(&RunConfig::gen, &G::roughness);
    t["gen.contrast"] = double_field(&RunConfig::gen, &G::contrast);
    t["gen.noise_sd"] = double_field(&RunConfig::gen, &G::noise_sd);
    t["gen.speckle"] = bool_field(&RunConfig::gen, &G::speckle);
    for (std::size_t i = 0; i < 3; ++i) {
      static const char* names[] = {"split.train", "split.val", "split.test"};
      t[names[i]] = {[i](RunConfig& c, const std::string& k, const std::string& v) { c.split.fractions[i] = to_double(k, v); },
                     [i](const RunConfig& c) { return fmt(c.split.fractions[i]); }};
    }
    t["split.seed"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.split.seed = to_uint(k, v); },
                       [](const RunConfig& c) { return std::to_string(c.split.seed); }};
    t["eval.polis_halved"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.polis_halved = to_bool(k, v); },
                              [](const RunConfig& c) { return fmt(c.polis_halved); }};
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second.set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second.get(*this);
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : fields()) out.push_back(k);
    return out;
  }();
  return names;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.snake.validate();
  cfg.train.validate();
  cfg.gen.validate(cfg.snake.feature_stride);
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open config " + file.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::save(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write config " + file.string());
  os << to_text();
}

}  // namespace cobra
