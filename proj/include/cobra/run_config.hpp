#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cobra/data.hpp"
#include "cobra/model.hpp"
#include "cobra/train.hpp"

namespace cobra {

struct SplitConfig {
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
};

/// Flat `key = value` configuration covering every model, training,
/// generator, split and evaluation setting. Blank lines and `#` comments are
/// ignored; unknown keys are rejected.
struct RunConfig {
  SnakeConfig snake;
  TrainConfig train;
  GenConfig gen;
  SplitConfig split;
  bool polis_halved = false;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& file);
  std::string to_text() const;
  void save(const std::filesystem::path& file) const;
};

}  // namespace cobra
