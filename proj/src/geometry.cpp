#include "cobra/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cobra {

Polyline::Polyline(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
  if (vertices_.size() < 2) {
    throw std::invalid_argument("Polyline: needs at least 2 vertices, got " + std::to_string(vertices_.size()));
  }
}

double Polyline::length() const {
  double total = 0.0;
  for (std::size_t i = 1; i < vertices_.size(); ++i) {
    total += std::hypot(vertices_[i].x - vertices_[i - 1].x, vertices_[i].y - vertices_[i - 1].y);
  }
  return total;
}

Polyline Polyline::reversed() const { return Polyline(std::vector<Point>(vertices_.rbegin(), vertices_.rend())); }

NdArray Polyline::to_array() const {
  NdArray out({vertices_.size(), 2});
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    out.at(i, 0) = vertices_[i].x;
    out.at(i, 1) = vertices_[i].y;
  }
  return out;
}

Polyline Polyline::from_array(const NdArray& xy) {
  if (xy.rank() != 2 || xy.dim(1) != 2) throw ShapeError("Polyline::from_array: expected [V,2], got " + shape_str(xy.shape()));
  std::vector<Point> pts(xy.dim(0));
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {xy.at(i, 0), xy.at(i, 1)};
  return Polyline(std::move(pts));
}

Polyline resample(const Polyline& line, std::size_t count) {
  if (count < 2) throw std::invalid_argument("resample: need at least 2 output vertices");
  const auto& v = line.vertices();
  std::vector<double> cumulative(v.size(), 0.0);
  for (std::size_t i = 1; i < v.size(); ++i) {
    cumulative[i] = cumulative[i - 1] + std::hypot(v[i].x - v[i - 1].x, v[i].y - v[i - 1].y);
  }
  const double total = cumulative.back();
  if (!(total > 0.0)) throw std::invalid_argument("resample: polyline has zero length");

  std::vector<Point> out(count);
  out.front() = v.front();
  out.back() = v.back();
  std::size_t seg = 1;
  for (std::size_t k = 1; k + 1 < count; ++k) {
    const double target = total * static_cast<double>(k) / static_cast<double>(count - 1);
    while (seg + 1 < v.size() && cumulative[seg] < target) ++seg;
    const double span = cumulative[seg] - cumulative[seg - 1];
    const double t = span > 0.0 ? (target - cumulative[seg - 1]) / span : 0.0;
    out[k] = {v[seg - 1].x + t * (v[seg].x - v[seg - 1].x), v[seg - 1].y + t * (v[seg].y - v[seg - 1].y)};
  }
  return Polyline(std::move(out));
}

Polyline init_contour(std::size_t count) {
  if (count < 2) throw std::invalid_argument("init_contour: need at least 2 vertices");
  std::vector<Point> pts(count);
  for (std::size_t i = 0; i < count; ++i) pts[i] = {0.5, static_cast<double>(i) / static_cast<double>(count - 1)};
  return Polyline(std::move(pts));
}

Polyline apply_offsets(const Polyline& line, const OffsetField& offsets) {
  if (offsets.size() != line.size()) {
    throw std::invalid_argument("apply_offsets: " + std::to_string(offsets.size()) + " offsets for " +
                                std::to_string(line.size()) + " vertices");
  }
  std::vector<Point> pts(line.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = {std::clamp(line[i].x + offsets.offsets[i].x, 0.0, 1.0),
              std::clamp(line[i].y + offsets.offsets[i].y, 0.0, 1.0)};
  }
  return Polyline(std::move(pts));
}

Var apply_offsets(const Var& points, const Var& offsets) {
  if (points.shape() != offsets.shape()) {
    throw std::invalid_argument("apply_offsets: shape " + shape_str(offsets.shape()) + " for points " +
                                shape_str(points.shape()));
  }
  return clamp(add(points, offsets), 0.0, 1.0);
}

}  // namespace cobra
