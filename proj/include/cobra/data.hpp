#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cobra/geometry.hpp"
#include "cobra/tensor.hpp"

namespace cobra {

struct GenConfig {
  std::size_t size = 128;
  std::size_t count = 500;
  std::uint64_t seed = 0;
  double roughness = 0.55;  // midpoint-displacement amplitude decay per level
  double contrast = 0.4;    // mean intensity gap between the two regions
  double noise_sd = 0.08;
  bool speckle = false;     // multiplicative unit-mean noise

  void validate(std::size_t feature_stride) const;
};

struct Scene {
  std::string id;
  NdArray image;   // [H,W], values k/255
  Polyline truth;  // normalized coordinates, top to bottom
};

/// Jagged near-vertical front: bright region left of it, dark region right.
Scene generate_scene(const GenConfig& cfg, std::mt19937_64& rng, std::string id);

std::string scene_id(std::size_t index);

/// cfg.count scenes; scene i uses seed cfg.seed + i.
std::vector<Scene> generate_dataset(const GenConfig& cfg);

/// Returns the line reversed if it runs bottom to top.
Polyline orient_top_to_bottom(const Polyline& line);

// PGM (P5, maxval 255) and GeoJSON LineString in pixel coordinates.
void write_pgm(const std::filesystem::path& file, const NdArray& image);
NdArray read_pgm(const std::filesystem::path& file);
std::string polyline_geojson(const Polyline& line, std::size_t height, std::size_t width, const std::string& id);
Polyline parse_polyline_geojson(const std::string& text, std::size_t height, std::size_t width);

/// Writes images/{id}.pgm and truth/{id}.geojson under dir.
void write_scene(const Scene& scene, const std::filesystem::path& dir);
Scene read_scene(const std::filesystem::path& dir, const std::string& id);

struct Dataset {
  std::vector<Scene> scenes;
  GenConfig gen;  // echo from index.json when present
};

/// Scenes plus index.json listing ids and the generator settings.
void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes, const GenConfig& gen);
Dataset read_dataset(const std::filesystem::path& dir);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Deterministic shuffled partition of 0..count-1. Fractions must sum to 1
/// and every part must be non-empty.
Split make_split(std::size_t count, const std::array<double, 3>& fractions, std::uint64_t seed);

}  // namespace cobra
