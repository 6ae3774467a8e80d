#pragma once

#include <cstddef>
#include <vector>

#include "cobra/tensor.hpp"

namespace cobra {

struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

/// Open polyline in normalized image coordinates (x rightward, y downward).
/// First and last vertices are endpoints; the line is never closed.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Point> vertices);

  std::size_t size() const { return vertices_.size(); }
  const std::vector<Point>& vertices() const { return vertices_; }
  const Point& operator[](std::size_t i) const { return vertices_[i]; }
  Point& operator[](std::size_t i) { return vertices_[i]; }

  double length() const;
  Polyline reversed() const;

  /// [V,2] array of (x,y) rows.
  NdArray to_array() const;
  static Polyline from_array(const NdArray& xy);

  bool operator==(const Polyline&) const = default;

 private:
  std::vector<Point> vertices_;
};

/// Per-vertex displacement in normalized coordinates.
struct OffsetField {
  std::vector<Point> offsets;
  std::size_t size() const { return offsets.size(); }
};

/// `count` vertices equally spaced by arc length along `line`.
Polyline resample(const Polyline& line, std::size_t count);

/// Vertical line at x=0.5 from the top border to the bottom border.
Polyline init_contour(std::size_t count);

/// Vertex-wise sum, each coordinate clamped to [0,1].
Polyline apply_offsets(const Polyline& line, const OffsetField& offsets);

/// Graph version used inside the model: clamp(points + offsets, 0, 1) on [V,2] nodes.
Var apply_offsets(const Var& points, const Var& offsets);

}  // namespace cobra
