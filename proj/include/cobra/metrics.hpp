#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cobra/geometry.hpp"

namespace cobra {

/// Distance from p to the segment [a,b], projecting with endpoint clamping.
double point_segment_distance(const Point& p, const Point& a, const Point& b);
/// Distance from p to the closest point anywhere on the polyline.
double point_polyline_distance(const Point& p, const Polyline& line);

/// Mean vertex-to-line distance of v onto w plus that of w onto v.
/// With `halved`, the two means are averaged instead of summed.
double polis(const Polyline& v, const Polyline& w, bool halved = false);

/// Sample Pearson correlation. Throws std::domain_error if either input has
/// zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

struct EvalRow {
  std::string scene_id;
  double polis_norm = 0.0;
  double polis_px = 0.0;
  std::optional<double> uncertainty;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // sorted by scene id

  void sort_rows();
  double mean_polis_px() const;
  double stddev_polis_px() const;
  /// Pearson r between uncertainty and pixel polis; empty when undefined.
  std::optional<double> uncertainty_pearson() const;

  /// CSV with header `scene_id,polis_norm,polis_px,uncertainty` and a
  /// trailing `#` aggregate block.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& file) const;
};

}  // namespace cobra
