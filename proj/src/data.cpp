#include "cobra/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cobra {

namespace {

using json = nlohmann::json;

// Overall horizontal excursion of the front before roughness decay.
constexpr double kFrontAmplitude = 0.2;
constexpr double kFrontMargin = 0.02;
constexpr double kSpeckleLooks = 4.0;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// Midpoint displacement on a power-of-two grid, resampled to one x per row.
std::vector<double> front_curve(const GenConfig& cfg, std::mt19937_64& rng, std::size_t rows) {
  std::size_t n = 1;
  while (n < rows - 1) n *= 2;
  std::vector<double> grid(n + 1);
  const double base = uniform(rng, 0.3, 0.7);
  double amp = kFrontAmplitude * cfg.roughness;
  grid[0] = base + amp * uniform(rng, -1.0, 1.0);
  grid[n] = base + amp * uniform(rng, -1.0, 1.0);
  for (std::size_t step = n; step > 1; step /= 2) {
    amp *= cfg.roughness;
    const std::size_t half = step / 2;
    for (std::size_t i = half; i < n; i += step) {
      grid[i] = 0.5 * (grid[i - half] + grid[i + half]) + amp * uniform(rng, -1.0, 1.0);
    }
  }
  std::vector<double> xs(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = static_cast<double>(r) * static_cast<double>(n) / static_cast<double>(rows - 1);
    const auto i0 = std::min(static_cast<std::size_t>(s), n - 1);
    const double f = s - static_cast<double>(i0);
    xs[r] = std::clamp((1 - f) * grid[i0] + f * grid[i0 + 1], kFrontMargin, 1.0 - kFrontMargin);
  }
  return xs;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + file.string());
}

json gen_to_json(const GenConfig& g) {
  return {{"size", g.size}, {"count", g.count}, {"seed", g.seed}, {"roughness", g.roughness},
          {"contrast", g.contrast}, {"noise_sd", g.noise_sd}, {"speckle", g.speckle}};
}

GenConfig gen_from_json(const json& j) {
  GenConfig g;
  g.size = j.value("size", g.size);
  g.count = j.value("count", g.count);
  g.seed = j.value("seed", g.seed);
  g.roughness = j.value("roughness", g.roughness);
  g.contrast = j.value("contrast", g.contrast);
  g.noise_sd = j.value("noise_sd", g.noise_sd);
  g.speckle = j.value("speckle", g.speckle);
  return g;
}

}  // namespace

void GenConfig::validate(std::size_t feature_stride) const {
  if (size < 2) throw std::invalid_argument("GenConfig: size must be >= 2");
  if (feature_stride == 0 || size % feature_stride != 0) {
    throw std::invalid_argument("GenConfig: size " + std::to_string(size) + " is not a multiple of the feature stride " +
                                std::to_string(feature_stride));
  }
  if (count < 1) throw std::invalid_argument("GenConfig: count must be >= 1");
  if (!(roughness > 0.0 && roughness < 1.0)) throw std::invalid_argument("GenConfig: roughness must lie in (0,1)");
  if (!(contrast >= 0.0 && contrast <= 1.0)) throw std::invalid_argument("GenConfig: contrast must lie in [0,1]");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("GenConfig: noise_sd must be >= 0");
}

Scene generate_scene(const GenConfig& cfg, std::mt19937_64& rng, std::string id) {
  const std::size_t h = cfg.size, w = cfg.size;
  const std::vector<double> front = front_curve(cfg, rng, h);

  // Low-frequency texture: a few random plane waves scaled with the noise level.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves(3);
  for (auto& wv : waves) {
    wv = {uniform(rng, 0.5, 3.0), uniform(rng, 0.5, 3.0), uniform(rng, 0.0, 2.0 * std::numbers::pi),
          cfg.noise_sd * uniform(rng, 0.2, 0.6)};
  }
  NdArray texture({h, w});
  std::vector<bool> left(h * w);
  double tex_sum[2] = {0.0, 0.0};
  std::size_t tex_count[2] = {0, 0};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double cx = static_cast<double>(c) / static_cast<double>(w - 1);
      const double cy = static_cast<double>(r) / static_cast<double>(h - 1);
      double t = 0.0;
      for (const auto& wv : waves) t += wv.amp * std::sin(2.0 * std::numbers::pi * (wv.fx * cx + wv.fy * cy) + wv.phase);
      texture.at(r, c) = t;
      const bool is_left = cx < front[r];
      left[r * w + c] = is_left;
      tex_sum[is_left] += t;
      ++tex_count[is_left];
    }
  }
  const double tex_mean[2] = {tex_count[0] ? tex_sum[0] / static_cast<double>(tex_count[0]) : 0.0,
                              tex_count[1] ? tex_sum[1] / static_cast<double>(tex_count[1]) : 0.0};

  std::normal_distribution<double> noise(0.0, 1.0);
  std::gamma_distribution<double> speckle(kSpeckleLooks, 1.0 / kSpeckleLooks);
  NdArray image({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const bool is_left = left[i];
    const double mean = is_left ? 0.5 + cfg.contrast / 2 : 0.5 - cfg.contrast / 2;
    double v = mean + texture[i] - tex_mean[is_left];
    if (cfg.noise_sd > 0.0) v += cfg.noise_sd * noise(rng);
    if (cfg.speckle) v *= speckle(rng);
    v = std::clamp(v, 0.0, 1.0);
    image[i] = std::round(v * 255.0) / 255.0;
  }

  std::vector<Point> pts(h);
  for (std::size_t r = 0; r < h; ++r) pts[r] = {front[r], static_cast<double>(r) / static_cast<double>(h - 1)};
  return Scene{std::move(id), std::move(image), Polyline(std::move(pts))};
}

std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

std::vector<Scene> generate_dataset(const GenConfig& cfg) {
  std::vector<Scene> scenes(cfg.count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < cfg.count; ++i) {
    std::mt19937_64 rng(cfg.seed + i);
    scenes[i] = generate_scene(cfg, rng, scene_id(i));
  }
  return scenes;
}

Polyline orient_top_to_bottom(const Polyline& line) {
  return line[0].y > line[line.size() - 1].y ? line.reversed() : line;
}

void write_pgm(const std::filesystem::path& file, const NdArray& image) {
  if (image.rank() != 2) throw ShapeError("write_pgm: image must be [H,W]");
  std::string out = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (double v : image.values()) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  write_file(file, out);
}

NdArray read_pgm(const std::filesystem::path& file) {
  const std::string bytes = read_file(file);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> void { throw std::runtime_error("PGM " + file.string() + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) fail(std::string("malformed header, expected ") + what);
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (missing P5 magic)");
  pos = 2;
  const std::size_t width = read_int("width");
  const std::size_t height = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (width == 0 || height == 0) fail("zero image extent");
  if (maxval == 0 || maxval > 255) fail("only 8-bit PGM (maxval <= 255) is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("malformed header");
  ++pos;
  if (bytes.size() - pos < width * height) fail("truncated pixel data");
  NdArray image({height, width});
  for (std::size_t i = 0; i < width * height; ++i) {
    image[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
  }
  return image;
}

std::string polyline_geojson(const Polyline& line, std::size_t height, std::size_t width, const std::string& id) {
  json coords = json::array();
  for (const auto& p : line.vertices()) {
    coords.push_back({p.x * static_cast<double>(width - 1), p.y * static_cast<double>(height - 1)});
  }
  json doc = {{"type", "Feature"},
              {"properties", {{"id", id}}},
              {"geometry", {{"type", "LineString"}, {"coordinates", coords}}}};
  return doc.dump(1) + "\n";
}

Polyline parse_polyline_geojson(const std::string& text, std::size_t height, std::size_t width) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("GeoJSON parse error: ") + e.what());
  }
  const json* geom = &doc;
  if (doc.value("type", "") == "FeatureCollection") {
    if (!doc.contains("features") || doc["features"].empty()) throw std::runtime_error("GeoJSON: empty FeatureCollection");
    geom = &doc["features"][0];
  }
  if (geom->value("type", "") == "Feature") {
    if (!geom->contains("geometry")) throw std::runtime_error("GeoJSON: Feature without geometry");
    geom = &(*geom)["geometry"];
  }
  if (geom->value("type", "") != "LineString" || !geom->contains("coordinates")) {
    throw std::runtime_error("GeoJSON: expected a LineString geometry");
  }
  const auto& coords = (*geom)["coordinates"];
  if (!coords.is_array() || coords.size() < 2) {
    throw std::runtime_error("GeoJSON: LineString needs at least 2 points, got " + std::to_string(coords.size()));
  }
  std::vector<Point> pts;
  pts.reserve(coords.size());
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) {
      throw std::runtime_error("GeoJSON: malformed coordinate");
    }
    pts.push_back({c[0].get<double>() / static_cast<double>(width - 1), c[1].get<double>() / static_cast<double>(height - 1)});
  }
  return Polyline(std::move(pts));
}

void write_scene(const Scene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "truth");
  write_pgm(dir / "images" / (scene.id + ".pgm"), scene.image);
  write_file(dir / "truth" / (scene.id + ".geojson"),
             polyline_geojson(scene.truth, scene.image.dim(0), scene.image.dim(1), scene.id));
}

Scene read_scene(const std::filesystem::path& dir, const std::string& id) {
  NdArray image = read_pgm(dir / "images" / (id + ".pgm"));
  const auto truth_file = dir / "truth" / (id + ".geojson");
  Polyline truth;
  try {
    truth = parse_polyline_geojson(read_file(truth_file), image.dim(0), image.dim(1));
  } catch (const std::exception& e) {
    throw std::runtime_error(truth_file.string() + ": " + e.what());
  }
  return Scene{id, std::move(image), std::move(truth)};
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes, const GenConfig& gen) {
  std::filesystem::create_directories(dir);
  json ids = json::array();
  for (const auto& s : scenes) {
    write_scene(s, dir);
    ids.push_back(s.id);
  }
  write_file(dir / "index.json", json{{"ids", ids}, {"gen", gen_to_json(gen)}}.dump(1) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  json index;
  try {
    index = json::parse(read_file(dir / "index.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error((dir / "index.json").string() + ": " + e.what());
  }
  if (!index.contains("ids") || !index["ids"].is_array()) throw std::runtime_error("index.json: missing 'ids' array");
  Dataset ds;
  if (index.contains("gen")) ds.gen = gen_from_json(index["gen"]);
  const auto ids = index["ids"].get<std::vector<std::string>>();
  ds.scenes.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ds.scenes[i] = read_scene(dir, ids[i]);
  return ds;
}

Split make_split(std::size_t count, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("make_split: fractions must be non-negative");
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("make_split: fractions must sum to 1");
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * fractions[0]));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(count) * fractions[1]));
  if (n_train + n_val >= count || n_train == 0 || n_val == 0) {
    throw std::invalid_argument("make_split: " + std::to_string(count) + " scenes leave an empty partition");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

}  // namespace cobra
