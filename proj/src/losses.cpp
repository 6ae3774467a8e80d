#include "cobra/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cobra {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_prediction(const Var& p, const char* op) {
  if (p.value().rank() != 2 || p.shape()[1] != 2 || p.shape()[0] == 0) {
    throw ShapeError(std::string(op) + ": prediction must be [V,2] with V >= 1, got " + shape_str(p.shape()));
  }
}

void check_equal_counts(const Var& p, const Polyline& t, const char* op) {
  check_prediction(p, op);
  if (p.shape()[0] != t.size()) {
    throw ShapeError(std::string(op) + ": vertex count mismatch " + std::to_string(p.shape()[0]) + " vs " +
                     std::to_string(t.size()));
  }
}

inline double sq_dist(const NdArray& p, std::size_t i, const Polyline& t, std::size_t j) {
  const double dx = p.at(i, 0) - t[j].x;
  const double dy = p.at(i, 1) - t[j].y;
  return dx * dx + dy * dy;
}

// 1-based (I+1)x(J+1) grid helper.
struct Grid {
  std::size_t rows, cols;
  std::vector<double> cells;
  Grid(std::size_t r, std::size_t c, double fill) : rows(r), cols(c), cells(r * c, fill) {}
  double& operator()(std::size_t i, std::size_t j) { return cells[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
};

inline double softmin3(double a, double b, double c, double gamma) {
  const double m = std::min({a, b, c});
  if (m == kInf) return kInf;
  const double s = std::exp(-(a - m) / gamma) + std::exp(-(b - m) / gamma) + std::exp(-(c - m) / gamma);
  return m - gamma * std::log(s);
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kL1: return "L1";
    case LossKind::kL2: return "L2";
    case LossKind::kDtw: return "DTW";
    case LossKind::kSoftDtw: return "SoftDTW";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "L1" || text == "l1") return LossKind::kL1;
  if (text == "L2" || text == "l2") return LossKind::kL2;
  if (text == "DTW" || text == "dtw") return LossKind::kDtw;
  if (text == "SoftDTW" || text == "softdtw") return LossKind::kSoftDtw;
  throw std::invalid_argument("unknown loss kind '" + text + "' (expected L1, L2, DTW or SoftDTW)");
}

void LossConfig::validate() const {
  if (kind == LossKind::kSoftDtw && !(gamma > 0.0)) throw std::invalid_argument("SoftDTW gamma must be > 0");
}

bool AlignmentPath::valid(std::size_t rows, std::size_t cols) const {
  if (pairs.empty() || pairs.front() != std::pair<std::size_t, std::size_t>{0, 0}) return false;
  if (pairs.back() != std::pair<std::size_t, std::size_t>{rows - 1, cols - 1}) return false;
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    const auto di = pairs[k].first - pairs[k - 1].first;
    const auto dj = pairs[k].second - pairs[k - 1].second;
    if (pairs[k].first < pairs[k - 1].first || pairs[k].second < pairs[k - 1].second) return false;
    if (di > 1 || dj > 1 || (di == 0 && dj == 0)) return false;
  }
  return true;
}

Var loss_l1(const Var& p, const Polyline& t) {
  check_equal_counts(p, t, "loss_l1");
  const std::size_t n = t.size();
  const NdArray& pv = p.value();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::sqrt(sq_dist(pv, i, t, i));
  return make_node(NdArray({1}, total / static_cast<double>(n)), {p}, [t, n](Node& self) {
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    const double go = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = in.value.at(i, 0) - t[i].x, dy = in.value.at(i, 1) - t[i].y;
      const double norm = std::sqrt(dx * dx + dy * dy);
      if (norm == 0.0) continue;
      g.at(i, 0) += go * dx / norm;
      g.at(i, 1) += go * dy / norm;
    }
  });
}

Var loss_l2(const Var& p, const Polyline& t) {
  check_equal_counts(p, t, "loss_l2");
  const std::size_t n = t.size();
  const NdArray& pv = p.value();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += sq_dist(pv, i, t, i);
  return make_node(NdArray({1}, total / static_cast<double>(n)), {p}, [t, n](Node& self) {
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    const double go = 2.0 * self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      g.at(i, 0) += go * (in.value.at(i, 0) - t[i].x);
      g.at(i, 1) += go * (in.value.at(i, 1) - t[i].y);
    }
  });
}

double softmin(std::span<const double> xs, double gamma) {
  if (xs.empty()) throw std::invalid_argument("softmin: empty argument list");
  if (!(gamma > 0.0)) throw std::invalid_argument("softmin: gamma must be > 0");
  const double m = *std::min_element(xs.begin(), xs.end());
  if (m == kInf) return kInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(-(x - m) / gamma);
  return m - gamma * std::log(s);
}

namespace {

Grid dtw_table(const NdArray& pv, const Polyline& t) {
  const std::size_t rows = pv.dim(0), cols = t.size();
  Grid r(rows + 1, cols + 1, kInf);
  r(0, 0) = 0.0;
  for (std::size_t i = 1; i <= rows; ++i) {
    for (std::size_t j = 1; j <= cols; ++j) {
      r(i, j) = sq_dist(pv, i - 1, t, j - 1) + std::min({r(i - 1, j - 1), r(i - 1, j), r(i, j - 1)});
    }
  }
  return r;
}

AlignmentPath backtrack(const Grid& r) {
  AlignmentPath path;
  std::size_t i = r.rows - 1, j = r.cols - 1;
  while (true) {
    path.pairs.emplace_back(i - 1, j - 1);
    if (i == 1 && j == 1) break;
    const double diag = r(i - 1, j - 1), up = r(i - 1, j), left = r(i, j - 1);
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(path.pairs.begin(), path.pairs.end());
  return path;
}

}  // namespace

AlignmentPath dtw_alignment(const Polyline& p, const Polyline& t) { return backtrack(dtw_table(p.to_array(), t)); }

Var loss_dtw(const Var& p, const Polyline& t) {
  check_prediction(p, "loss_dtw");
  if (t.size() == 0) throw ShapeError("loss_dtw: empty target contour");
  const Grid r = dtw_table(p.value(), t);
  const double value = r(r.rows - 1, r.cols - 1);
  AlignmentPath path = backtrack(r);
  return make_node(NdArray({1}, value), {p}, [t, path = std::move(path)](Node& self) {
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    const double go = 2.0 * self.grad[0];
    for (const auto& [i, j] : path.pairs) {
      g.at(i, 0) += go * (in.value.at(i, 0) - t[j].x);
      g.at(i, 1) += go * (in.value.at(i, 1) - t[j].y);
    }
  });
}

Var loss_softdtw(const Var& p, const Polyline& t, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("loss_softdtw: gamma must be > 0");
  check_prediction(p, "loss_softdtw");
  if (t.size() == 0) throw ShapeError("loss_softdtw: empty target contour");
  const NdArray& pv = p.value();
  const std::size_t rows = pv.dim(0), cols = t.size();

  // Forward table padded by one extra row/column on the far side for the
  // reverse pass.
  Grid cost(rows + 2, cols + 2, 0.0);
  Grid r(rows + 2, cols + 2, kInf);
  r(0, 0) = 0.0;
  for (std::size_t i = 1; i <= rows; ++i) {
    for (std::size_t j = 1; j <= cols; ++j) {
      cost(i, j) = sq_dist(pv, i - 1, t, j - 1);
      r(i, j) = cost(i, j) + softmin3(r(i - 1, j - 1), r(i - 1, j), r(i, j - 1), gamma);
    }
  }
  const double value = r(rows, cols);

  return make_node(NdArray({1}, value), {p}, [t, gamma, rows, cols, cost = std::move(cost),
                                               r = std::move(r)](Node& self) mutable {
    // Expected alignment matrix E = d value / d cost.
    for (std::size_t i = 1; i <= rows + 1; ++i) r(i, cols + 1) = -kInf;
    for (std::size_t j = 1; j <= cols + 1; ++j) r(rows + 1, j) = -kInf;
    r(rows + 1, cols + 1) = r(rows, cols);
    Grid e(rows + 2, cols + 2, 0.0);
    e(rows + 1, cols + 1) = 1.0;
    for (std::size_t j = cols; j >= 1; --j) {
      for (std::size_t i = rows; i >= 1; --i) {
        const double a = std::exp((r(i + 1, j) - r(i, j) - cost(i + 1, j)) / gamma);
        const double b = std::exp((r(i, j + 1) - r(i, j) - cost(i, j + 1)) / gamma);
        const double c = std::exp((r(i + 1, j + 1) - r(i, j) - cost(i + 1, j + 1)) / gamma);
        e(i, j) = e(i + 1, j) * a + e(i, j + 1) * b + e(i + 1, j + 1) * c;
      }
    }
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    const double go = 2.0 * self.grad[0];
    for (std::size_t i = 1; i <= rows; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 1; j <= cols; ++j) {
        gx += e(i, j) * (in.value.at(i - 1, 0) - t[j - 1].x);
        gy += e(i, j) * (in.value.at(i - 1, 1) - t[j - 1].y);
      }
      g.at(i - 1, 0) += go * gx;
      g.at(i - 1, 1) += go * gy;
    }
  });
}

Var contour_loss(const Var& p, const Polyline& t, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::kL1: return loss_l1(p, t);
    case LossKind::kL2: return loss_l2(p, t);
    case LossKind::kDtw: return loss_dtw(p, t);
    case LossKind::kSoftDtw: return loss_softdtw(p, t, cfg.gamma);
  }
  throw std::logic_error("contour_loss: unhandled loss kind");
}

Var deep_supervision_loss(std::span<const Var> contours, const Polyline& t, const LossConfig& cfg) {
  if (contours.empty()) throw std::invalid_argument("deep_supervision_loss: no iteration outputs");
  Var total = contour_loss(contours[0], t, cfg);
  for (std::size_t k = 1; k < contours.size(); ++k) total = add(total, contour_loss(contours[k], t, cfg));
  return total;
}

}  // namespace cobra
