#include "cobra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cobra {

double point_segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

double point_polyline_distance(const Point& p, const Polyline& line) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < line.size(); ++i) best = std::min(best, point_segment_distance(p, line[i - 1], line[i]));
  return best;
}

double polis(const Polyline& v, const Polyline& w, bool halved) {
  if (v.size() < 2 || w.size() < 2) throw std::invalid_argument("polis: polylines need at least 2 vertices");
  double sv = 0.0, sw = 0.0;
  for (const auto& p : v.vertices()) sv += point_polyline_distance(p, w);
  for (const auto& p : w.vertices()) sw += point_polyline_distance(p, v);
  const double total = sv / static_cast<double>(v.size()) + sw / static_cast<double>(w.size());
  return halved ? 0.5 * total : total;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("pearson: undefined for zero-variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void EvalReport::sort_rows() {
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.scene_id < b.scene_id; });
}

double EvalReport::mean_polis_px() const {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& r : rows) s += r.polis_px;
  return s / static_cast<double>(rows.size());
}

double EvalReport::stddev_polis_px() const {
  if (rows.size() < 2) return 0.0;
  const double m = mean_polis_px();
  double s = 0.0;
  for (const auto& r : rows) s += (r.polis_px - m) * (r.polis_px - m);
  return std::sqrt(s / static_cast<double>(rows.size() - 1));
}

std::optional<double> EvalReport::uncertainty_pearson() const {
  std::vector<double> u, e;
  for (const auto& r : rows) {
    if (!r.uncertainty) return std::nullopt;
    u.push_back(*r.uncertainty);
    e.push_back(r.polis_px);
  }
  try {
    return pearson(u, e);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "scene_id,polis_norm,polis_px,uncertainty\n";
  bool has_uncertainty = false;
  double mean_u = 0.0;
  for (const auto& r : rows) {
    os << r.scene_id << ',' << num(r.polis_norm) << ',' << num(r.polis_px) << ',';
    if (r.uncertainty) {
      os << num(*r.uncertainty);
      has_uncertainty = true;
      mean_u += *r.uncertainty;
    }
    os << '\n';
  }
  os << "# scenes=" << rows.size() << '\n';
  os << "# mean_polis_px=" << num(mean_polis_px()) << '\n';
  os << "# std_polis_px=" << num(stddev_polis_px()) << '\n';
  if (has_uncertainty) {
    os << "# mean_uncertainty=" << num(rows.empty() ? 0.0 : mean_u / static_cast<double>(rows.size())) << '\n';
    const auto r = uncertainty_pearson();
    os << "# pearson_r=" << (r ? num(*r) : std::string("undefined")) << '\n';
  }
  return os.str();
}

void EvalReport::write_csv(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << to_csv();
  if (!os) throw std::runtime_error("failed writing " + file.string());
}

}  // namespace cobra
