#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cobra/geometry.hpp"
#include "cobra/tensor.hpp"

namespace cobra {

enum class LossKind { kL1, kL2, kDtw, kSoftDtw };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct LossConfig {
  LossKind kind = LossKind::kSoftDtw;
  double gamma = 0.01;  // SoftDTW smoothness, normalized coordinate units

  void validate() const;
};

/// Monotone alignment between contours p (I vertices) and t (J vertices).
/// Indices are 0-based here.
struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  /// Covers every index, non-decreasing, steps in {(1,0),(0,1),(1,1)},
  /// starts at (0,0) and ends at (I-1,J-1).
  bool valid(std::size_t rows, std::size_t cols) const;
};

// The contour losses take the prediction as a graph node [V,2] and the
// target as a constant polyline.

/// Mean Euclidean vertex distance. Subgradient 0 at coincident vertices.
Var loss_l1(const Var& p, const Polyline& t);
/// Mean squared vertex distance.
Var loss_l2(const Var& p, const Polyline& t);

/// -gamma * log(sum exp(-x/gamma)), shifted by the minimum.
double softmin(std::span<const double> xs, double gamma);

/// Minimum summed squared distance over all alignments; gradient follows the
/// optimal path.
Var loss_dtw(const Var& p, const Polyline& t);

/// Soft-DTW with softmin_gamma in place of min.
Var loss_softdtw(const Var& p, const Polyline& t, double gamma);

/// Optimal alignment of the hard DTW recurrence (ties prefer the diagonal).
AlignmentPath dtw_alignment(const Polyline& p, const Polyline& t);

Var contour_loss(const Var& p, const Polyline& t, const LossConfig& cfg);

/// Unweighted sum of the configured loss over every iteration output.
Var deep_supervision_loss(std::span<const Var> contours, const Polyline& t, const LossConfig& cfg);

}  // namespace cobra
