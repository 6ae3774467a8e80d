#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"

#include "cobra/losses.hpp"
#include "support/oracles.hpp"

using namespace cobra;
using oracle::brute_force_dtw;
using oracle::points_array;

namespace {

Var as_var(const Polyline& p) { return variable(p.to_array()); }

const double kLn3 = std::log(3.0);

}  // namespace

TEST_CASE("L1 and L2 hand values") {
  const Polyline t({{0.1, 0.2}, {0.5, 0.5}, {0.9, 0.1}});
  std::vector<Point> shifted;
  for (const auto& p : t.vertices()) shifted.push_back({p.x + 0.3, p.y + 0.4});
  CHECK(loss_l1(as_var(t), t).value()[0] == 0.0);
  CHECK(loss_l2(as_var(t), t).value()[0] == 0.0);
  CHECK(loss_l1(as_var(Polyline(shifted)), t).value()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(loss_l2(as_var(Polyline(shifted)), t).value()[0] == doctest::Approx(0.25).epsilon(1e-12));

  const Polyline p2({{0, 0}, {1, 0}}), t2({{0, 1}, {1, 0}});
  CHECK(loss_l1(as_var(p2), t2).value()[0] == 0.5);
  CHECK(loss_l2(as_var(p2), t2).value()[0] == 0.5);
  CHECK_THROWS_AS(loss_l1(as_var(p2), t), ShapeError);
  CHECK_THROWS_AS(loss_l2(as_var(p2), t), ShapeError);
}

TEST_CASE("L1 subgradient is zero at coincident vertices") {
  const Polyline t({{0.1, 0.2}, {0.5, 0.5}});
  const Var p = variable(NdArray({2, 2}, {0.1, 0.2, 0.7, 0.5}));
  backward(loss_l1(p, t));
  CHECK(p.grad().at(0, 0) == 0.0);
  CHECK(p.grad().at(0, 1) == 0.0);
  for (double g : p.grad().values()) CHECK(std::isfinite(g));
  CHECK(p.grad().at(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("L1 and L2 gradients against central differences") {
  std::mt19937_64 rng(31);
  const Polyline t = oracle::random_polyline(8, rng);
  const NdArray p = oracle::random_array({8, 2}, rng, 0.0, 1.0);
  CHECK(oracle::check_gradient([&](const Var& v) { return loss_l1(v, t); }, p).max_rel_error <= 1e-6);
  CHECK(oracle::check_gradient([&](const Var& v) { return loss_l2(v, t); }, p).max_rel_error <= 1e-6);
}

TEST_CASE("softmin hand values and properties") {
  const std::vector<double> equal(5, 0.7);
  CHECK(softmin(equal, 0.3) == doctest::Approx(0.7 - 0.3 * std::log(5.0)).epsilon(1e-12));
  const std::vector<double> xs{1.0, 2.0, 3.0};
  CHECK(std::abs(softmin(xs, 1e-6) - 1.0) <= 1e-5);
  const std::vector<double> two{1.0, 2.0};
  CHECK(softmin(two, 0.5) == doctest::Approx(1.0 - 0.5 * std::log1p(std::exp(-2.0))).epsilon(1e-12));
  CHECK(std::abs(softmin(two, 0.5) - 0.93656) <= 5e-5);
  CHECK_THROWS_AS(softmin(std::vector<double>{}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(softmin(two, 0.0), std::invalid_argument);

  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(-5.0, 5.0), g(0.01, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + trial % 6);
    for (auto& x : v) x = u(rng);
    const double gamma = g(rng);
    const double s = softmin(v, gamma);
    CHECK(s <= *std::min_element(v.begin(), v.end()));
    auto bumped = v;
    bumped[trial % v.size()] += 0.5;
    CHECK(softmin(bumped, gamma) >= s);
  }
}

TEST_CASE("DTW hand values") {
  const Polyline t({{0, 0}, {1, 1}});
  CHECK(loss_dtw(as_var(t), t).value()[0] == 0.0);
  CHECK(loss_dtw(as_var(Polyline({{0, 0}, {1, 0}})), t).value()[0] == 1.0);
  CHECK_THROWS_AS(loss_dtw(variable(NdArray({0, 2})), t), ShapeError);
}

TEST_CASE("DTW equals brute-force enumeration on integer contours") {
  std::mt19937_64 rng(33);
  for (std::size_t i = 1; i <= 6; ++i) {
    for (std::size_t j = 2; j <= 6; ++j) {
      for (int trial = 0; trial < 5; ++trial) {
        const auto p = oracle::random_integer_points(i, rng);
        const auto t = oracle::random_integer_points(j, rng);
        CHECK(loss_dtw(constant(points_array(p)), Polyline(t)).value()[0] == brute_force_dtw(p, t));
      }
    }
  }
}

TEST_CASE("brute-force enumeration counts the Delannoy paths") {
  CHECK(oracle::all_alignments(1, 1).size() == 1);
  CHECK(oracle::all_alignments(2, 2).size() == 3);
  CHECK(oracle::all_alignments(3, 3).size() == 13);
  CHECK(oracle::all_alignments(6, 6).size() == 1683);
  for (const auto& path : oracle::all_alignments(4, 3)) CHECK(path.valid(4, 3));
}

TEST_CASE("DTW alignment is valid and achieves the DP value") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    const Polyline p = oracle::random_polyline(2 + trial % 7, rng);
    const Polyline t = oracle::random_polyline(2 + (trial / 7) % 7, rng);
    const AlignmentPath path = dtw_alignment(p, t);
    CHECK(path.valid(p.size(), t.size()));
    CHECK(oracle::path_cost(path, p.vertices(), t.vertices()) == loss_dtw(as_var(p), t).value()[0]);
  }
  SUBCASE("invalid paths are rejected") {
    CHECK_FALSE(AlignmentPath{{{0, 0}, {1, 1}}}.valid(3, 2));
    CHECK_FALSE(AlignmentPath{{{0, 0}, {2, 1}}}.valid(3, 2));
    CHECK_FALSE(AlignmentPath{{{0, 1}, {1, 1}}}.valid(2, 2));
    CHECK(AlignmentPath{{{0, 0}, {1, 0}, {1, 1}}}.valid(2, 2));
  }
}

TEST_CASE("DTW is symmetric under simultaneous reversal") {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 200; ++trial) {
    const Polyline p = oracle::random_polyline(2 + trial % 9, rng);
    const Polyline t = oracle::random_polyline(2 + (trial / 3) % 9, rng);
    CHECK(loss_dtw(as_var(p), t).value()[0] ==
          doctest::Approx(loss_dtw(as_var(p.reversed()), t.reversed()).value()[0]).epsilon(1e-12));
  }
}

TEST_CASE("DTW gradient follows the optimal path") {
  // Away from ties the DTW value is smooth, so differences agree with the path gradient.
  std::mt19937_64 rng(36);
  const Polyline t = oracle::random_polyline(7, rng);
  const NdArray p = oracle::random_array({6, 2}, rng, 0.0, 1.0);
  CHECK(oracle::check_gradient([&](const Var& v) { return loss_dtw(v, t); }, p, 1e-7).max_rel_error <= 1e-6);
}

TEST_CASE("SoftDTW hand values") {
  const Polyline p({{0, 0}, {1, 0}}), t({{0, 0}, {1, 1}});
  CHECK(std::abs(loss_softdtw(as_var(p), t, 1e-4).value()[0] - 1.0) <= 1e-3);
  CHECK_THROWS_AS(loss_softdtw(as_var(p), t, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_softdtw(as_var(p), t, -1.0), std::invalid_argument);

  SUBCASE("identical contours stay within the softmin slack") {
    // Vertices 1/7 apart, so every off-diagonal cost exceeds the gammas used here.
    const Polyline line = init_contour(8);
    for (double gamma : {1e-4, 1e-3, 0.01}) {
      const double v = loss_softdtw(as_var(line), line, gamma).value()[0];
      CHECK(v <= 0.0);
      CHECK(v >= -gamma * kLn3 * 7.0);
    }
    CHECK(std::abs(loss_softdtw(as_var(line), line, 1e-6).value()[0]) <= 1e-5);
  }
}

TEST_CASE("SoftDTW gradient against central differences") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    const Polyline t = oracle::random_polyline(8, rng);
    const NdArray p = oracle::random_array({8, 2}, rng, 0.0, 1.0);
    CHECK(oracle::check_gradient([&](const Var& v) { return loss_softdtw(v, t, 0.1); }, p).max_rel_error <= 1e-6);
  }
}

TEST_CASE("SoftDTW stays within the relaxation bounds of DTW") {
  std::mt19937_64 rng(38);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t i = 1 + trial % 8, j = 2 + (trial / 8) % 7;
    const NdArray p = points_array(oracle::random_points(i, rng));
    const Polyline t = oracle::random_polyline(j, rng);
    const double dtw = loss_dtw(constant(p), t).value()[0];
    for (double gamma : {1e-4, 0.01, 0.1, 1.0}) {
      const double soft = loss_softdtw(constant(p), t, gamma).value()[0];
      CHECK(soft <= dtw + 1e-12);
      CHECK(dtw - soft <= gamma * kLn3 * static_cast<double>(i + j));
    }
  }
}

TEST_CASE("contour_loss dispatch and deep supervision") {
  std::mt19937_64 rng(39);
  const Polyline t = oracle::random_polyline(6, rng);
  const Var a = constant(oracle::random_array({6, 2}, rng, 0.0, 1.0));
  const Var b = constant(oracle::random_array({6, 2}, rng, 0.0, 1.0));
  for (auto kind : {LossKind::kL1, LossKind::kL2, LossKind::kDtw, LossKind::kSoftDtw}) {
    const LossConfig cfg{kind, 0.05};
    const double la = contour_loss(a, t, cfg).value()[0], lb = contour_loss(b, t, cfg).value()[0];
    const std::vector<Var> one{a}, two{a, b};
    CHECK(deep_supervision_loss(one, t, cfg).value()[0] == la);
    CHECK(deep_supervision_loss(two, t, cfg).value()[0] == la + lb);
    CHECK(parse_loss_kind(to_string(kind)) == kind);
  }
  const std::vector<Var> exact(3, as_var(t));
  CHECK(deep_supervision_loss(exact, t, LossConfig{LossKind::kDtw, 0.01}).value()[0] == 0.0);
  CHECK_THROWS_AS(deep_supervision_loss(std::vector<Var>{}, t, LossConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(parse_loss_kind("huber"), std::invalid_argument);
  CHECK_THROWS_AS((LossConfig{LossKind::kSoftDtw, 0.0}.validate()), std::invalid_argument);
}

TEST_CASE("non-SoftDTW losses are non-negative") {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 100; ++trial) {
    const Polyline t = oracle::random_polyline(5, rng);
    const Var p = constant(oracle::random_array({5, 2}, rng, 0.0, 1.0));
    CHECK(loss_l1(p, t).value()[0] >= 0.0);
    CHECK(loss_l2(p, t).value()[0] >= 0.0);
    CHECK(loss_dtw(p, t).value()[0] >= 0.0);
  }
}
