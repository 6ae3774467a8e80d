#include <cmath>
#include <random>
#include <set>

#include "doctest.h"

#include "cobra/tensor.hpp"
#include "support/oracles.hpp"

using namespace cobra;
using oracle::check_gradient;
using oracle::random_array;
using oracle::weighted_sum;

namespace {

constexpr double kOpTolerance = 1e-6;

}  // namespace

TEST_CASE("NdArray enforces shape and value count") {
  CHECK_THROWS_AS(NdArray({2, 3}, std::vector<double>(5)), ShapeError);
  NdArray a({2, 3}, 1.5);
  CHECK(a.size() == 6);
  CHECK(a.at(1, 2) == 1.5);
  CHECK_THROWS_AS(a.reshaped({4}), ShapeError);
  CHECK(a.reshaped({3, 2}).dim(0) == 3);
  NdArray b({3, 2});
  CHECK_THROWS_AS(a.add_inplace(b), ShapeError);
}

TEST_CASE("conv2d hand values") {
  SUBCASE("scalar kernel scales the input") {
    const Var y = conv2d(constant(NdArray({1, 3, 3}, 1.0)), constant(NdArray({1, 1, 1, 1}, 2.0)), 1, 0);
    CHECK(y.shape() == Shape{1, 3, 3});
    for (double v : y.value().values()) CHECK(v == 2.0);
  }
  SUBCASE("unit 1x1 kernel is the identity") {
    std::mt19937_64 rng(1);
    const NdArray x = random_array({1, 4, 5}, rng);
    CHECK(conv2d(constant(x), constant(NdArray({1, 1, 1, 1}, 1.0)), 1, 0).value() == x);
  }
  SUBCASE("output extent follows stride and padding") {
    const Var y = conv2d(constant(NdArray({1, 128, 128})), constant(NdArray({16, 1, 3, 3})), 2, 1);
    CHECK(y.shape() == Shape{16, 64, 64});
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(conv2d(constant(NdArray({2, 4, 4})), constant(NdArray({1, 3, 3, 3})), 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(constant(NdArray({1, 4, 4})), constant(NdArray({1, 1, 2, 2})), 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(constant(NdArray({1, 4, 4})), constant(NdArray({1, 1, 3, 3})), 0, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(constant(NdArray({1, 2, 2})), constant(NdArray({1, 1, 5, 5})), 1, 0), ShapeError);
  }
}

TEST_CASE("conv2d gradients against central differences") {
  std::mt19937_64 rng(2);
  const NdArray x = random_array({2, 5, 5}, rng);
  const NdArray k = random_array({3, 2, 3, 3}, rng);
  for (std::size_t stride : {1, 2}) {
    CAPTURE(stride);
    auto wrt_input = [&](const Var& v) { return weighted_sum(conv2d(v, constant(k), stride, 1), 3); };
    auto wrt_kernel = [&](const Var& v) { return weighted_sum(conv2d(constant(x), v, stride, 1), 3); };
    CHECK(check_gradient(wrt_input, x).max_rel_error <= kOpTolerance);
    CHECK(check_gradient(wrt_kernel, k).max_rel_error <= kOpTolerance);
  }
}

TEST_CASE("conv1d_dilated hand values") {
  std::mt19937_64 rng(4);
  const NdArray x = random_array({1, 8}, rng);
  SUBCASE("centre tap is the identity for any dilation") {
    for (std::size_t d : {1, 2, 3, 9}) {
      CHECK(conv1d_dilated(constant(x), constant(NdArray({1, 1, 3}, {0.0, 1.0, 0.0})), d).value() == x);
    }
  }
  SUBCASE("left tap shifts by the dilation with zero fill") {
    const NdArray y = conv1d_dilated(constant(x), constant(NdArray({1, 1, 3}, {1.0, 0.0, 0.0})), 3).value();
    for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == (i < 3 ? 0.0 : x[i - 3]));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(conv1d_dilated(constant(x), constant(NdArray({1, 1, 3})), 0), ShapeError);
    CHECK_THROWS_AS(conv1d_dilated(constant(x), constant(NdArray({1, 2, 3})), 1), ShapeError);
    CHECK_THROWS_AS(conv1d_dilated(constant(x), constant(NdArray({1, 1, 2})), 1), ShapeError);
  }
}

TEST_CASE("conv1d_dilated gradients against central differences") {
  std::mt19937_64 rng(5);
  const NdArray x = random_array({2, 16}, rng);
  const NdArray k = random_array({3, 2, 3}, rng);
  for (std::size_t d : {1, 3, 9}) {
    CAPTURE(d);
    auto wrt_input = [&](const Var& v) { return weighted_sum(conv1d_dilated(v, constant(k), d), 6); };
    auto wrt_kernel = [&](const Var& v) { return weighted_sum(conv1d_dilated(constant(x), v, d), 6); };
    CHECK(check_gradient(wrt_input, x).max_rel_error <= kOpTolerance);
    CHECK(check_gradient(wrt_kernel, k).max_rel_error <= kOpTolerance);
  }
}

TEST_CASE("dilated stack receptive field is 53 vertices") {
  // Impulse response through the default schedule with all-positive kernels.
  const std::size_t v = 128, centre = 64;
  NdArray impulse({1, v}, 0.0);
  impulse[centre] = 1.0;
  Var x = constant(impulse);
  for (std::size_t d : {1, 3, 9, 9, 3, 1}) x = conv1d_dilated(x, constant(NdArray({1, 1, 3}, 1.0)), d);
  std::size_t touched = 0, lo = v, hi = 0;
  for (std::size_t i = 0; i < v; ++i) {
    if (x.value()[i] != 0.0) {
      ++touched;
      lo = std::min(lo, i);
      hi = std::max(hi, i);
    }
  }
  CHECK(touched == 53);
  CHECK(hi - lo + 1 == 53);
  CHECK(lo == centre - 26);
}

TEST_CASE("elementwise op gradients against central differences") {
  std::mt19937_64 rng(7);
  // Keep values away from the relu and clamp kinks.
  NdArray x = random_array({3, 4}, rng);
  for (auto& v : x.values()) v += (v >= 0 ? 0.05 : -0.05);
  const NdArray other = random_array({3, 4}, rng);
  const NdArray bias = random_array({3}, rng);

  CHECK(check_gradient([](const Var& v) { return weighted_sum(relu(v), 8); }, x).max_rel_error <= kOpTolerance);
  CHECK(check_gradient([&](const Var& v) { return weighted_sum(add(v, constant(other)), 8); }, x).max_rel_error <=
        kOpTolerance);
  CHECK(check_gradient([&](const Var& v) { return weighted_sum(mul(v, constant(other)), 8); }, x).max_rel_error <=
        kOpTolerance);
  CHECK(check_gradient([](const Var& v) { return weighted_sum(mul(v, v), 8); }, x).max_rel_error <= kOpTolerance);
  CHECK(check_gradient([](const Var& v) { return weighted_sum(square(v), 8); }, x).max_rel_error <= kOpTolerance);
  CHECK(check_gradient([](const Var& v) { return weighted_sum(scale(v, -2.5), 8); }, x).max_rel_error <=
        kOpTolerance);
  CHECK(check_gradient([](const Var& v) { return sum(v); }, x).max_rel_error <= kOpTolerance);
  CHECK(check_gradient([](const Var& v) { return weighted_sum(transpose2d(v), 8); }, x).max_rel_error <=
        kOpTolerance);
  CHECK(check_gradient([](const Var& v) { return weighted_sum(clamp(v, -0.5, 0.5), 8); }, x).max_rel_error <=
        kOpTolerance);
  CHECK(check_gradient([&](const Var& v) { return weighted_sum(concat_cols(v, constant(other)), 8); }, x)
            .max_rel_error <= kOpTolerance);
  CHECK(check_gradient([&](const Var& v) { return weighted_sum(concat_cols(constant(other), v), 8); }, x)
            .max_rel_error <= kOpTolerance);
  CHECK(check_gradient([&](const Var& v) { return weighted_sum(add_channel_bias(v, constant(bias)), 8); }, x)
            .max_rel_error <= kOpTolerance);
  CHECK(check_gradient([&](const Var& b) { return weighted_sum(add_channel_bias(constant(x), b), 8); }, bias)
            .max_rel_error <= kOpTolerance);
}

TEST_CASE("dropout gradient follows its mask") {
  std::mt19937_64 rng(9);
  const NdArray x = random_array({4, 6}, rng);
  auto f = [](const Var& v) {
    std::mt19937_64 mask_rng(42);  // same mask on every evaluation
    return weighted_sum(dropout(v, 0.3, DropoutMode::kOn, mask_rng), 10);
  };
  CHECK(check_gradient(f, x).max_rel_error <= kOpTolerance);
}

TEST_CASE("backward hand values") {
  const Var x = variable(NdArray({2}, {1.0, 2.0}));
  backward(sum(x));
  CHECK(x.grad() == NdArray({2}, {1.0, 1.0}));
  x.zero_grad();
  backward(sum(square(x)));
  CHECK(x.grad() == NdArray({2}, {2.0, 4.0}));
  SUBCASE("repeated calls accumulate") {
    backward(sum(square(x)));
    CHECK(x.grad() == NdArray({2}, {4.0, 8.0}));
  }
  SUBCASE("non-scalar loss is rejected") { CHECK_THROWS_AS(backward(x), ShapeError); }
}

TEST_CASE("backward visits a shared node once per path") {
  // y = x*x + x*x via a shared subexpression: dy/dx = 4x.
  const Var x = variable(NdArray({1}, 3.0));
  const Var s = mul(x, x);
  backward(add(s, s));
  CHECK(x.grad()[0] == 12.0);
}

TEST_CASE("backward handles a deep chain without recursion") {
  Var x = variable(NdArray({1}, 1.0));
  Var y = x;
  for (int i = 0; i < 200000; ++i) y = scale(y, 1.0);
  backward(y);
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("stop_gradient contract") {
  std::mt19937_64 rng(10);
  const NdArray v = random_array({3, 2}, rng);
  const Var x = variable(v);
  CHECK(stop_gradient(x).value() == v);
  SUBCASE("product rule with one branch severed") {
    const Var s = variable(NdArray({1}, 3.0));
    backward(sum(mul(stop_gradient(s), s)));
    CHECK(s.grad()[0] == 3.0);
  }
  SUBCASE("severed path carries no gradient") {
    backward(sum(square(stop_gradient(x))));
    for (double g : x.grad().values()) CHECK(g == 0.0);
  }
}

TEST_CASE("dropout contract") {
  std::mt19937_64 rng(11);
  const NdArray x = random_array({50, 20}, rng);
  SUBCASE("rate 0 and mode off are the identity") {
    std::mt19937_64 r(1);
    CHECK(dropout(constant(x), 0.0, DropoutMode::kOn, r).value() == x);
    CHECK(dropout(constant(x), 0.5, DropoutMode::kOff, r).value() == x);
  }
  SUBCASE("same seed gives the same mask") {
    std::mt19937_64 a(5), b(5);
    CHECK(dropout(constant(x), 0.2, DropoutMode::kOn, a).value() == dropout(constant(x), 0.2, DropoutMode::kOn, b).value());
  }
  SUBCASE("mean is preserved") {
    std::mt19937_64 r(6);
    const NdArray y = dropout(constant(NdArray({100000}, 1.0)), 0.2, DropoutMode::kOn, r).value();
    double mean = 0.0;
    for (double v : y.values()) mean += v;
    mean /= static_cast<double>(y.size());
    CHECK(std::abs(mean - 1.0) <= 0.02);
  }
  SUBCASE("rate outside [0,1) is rejected") {
    std::mt19937_64 r(7);
    CHECK_THROWS_AS(dropout(constant(x), 1.0, DropoutMode::kOn, r), std::invalid_argument);
    CHECK_THROWS_AS(dropout(constant(x), -0.1, DropoutMode::kOn, r), std::invalid_argument);
  }
}

TEST_CASE("bilinear_sample hand values") {
  SUBCASE("constant field") {
    const Var f = constant(NdArray({2, 4, 5}, 1.25));
    std::mt19937_64 rng(12);
    const NdArray pts = random_array({7, 2}, rng, -0.2, 1.2);
    const Var out = bilinear_sample(f, pts);
    for (double v : out.value().values()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));
  }
  SUBCASE("grid node returns the cell") {
    std::mt19937_64 rng(13);
    const NdArray fm = random_array({3, 5, 4}, rng);
    // Node (row 2, col 1) of a 5x4 map sits at x = 1/3, y = 2/4.
    const NdArray out = bilinear_sample(constant(fm), NdArray({1, 2}, {1.0 / 3.0, 0.5})).value();
    CHECK(out.shape() == Shape{1, 3});
    for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(0, c) == doctest::Approx(fm.at(c, 2, 1)).epsilon(1e-12));
  }
  SUBCASE("midway between horizontal neighbours") {
    NdArray two_rows({1, 2, 2}, {0.0, 4.0, 0.0, 4.0});
    CHECK(bilinear_sample(constant(two_rows), NdArray({1, 2}, {0.5, 0.0})).value()[0] == 2.0);
  }
  SUBCASE("out-of-range points clamp to the border") {
    NdArray fm({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    const NdArray out = bilinear_sample(constant(fm), NdArray({2, 2}, {-1.0, -1.0, 2.0, 2.0})).value();
    CHECK(out[0] == 1.0);
    CHECK(out[1] == 4.0);
  }
  SUBCASE("no points is an error") {
    CHECK_THROWS_AS(bilinear_sample(constant(NdArray({1, 2, 2})), NdArray({0, 2})), ShapeError);
  }
}

TEST_CASE("bilinear_sample gradients against central differences") {
  std::mt19937_64 rng(14);
  const NdArray fm = random_array({3, 6, 7}, rng);
  // Interior points away from cell boundaries, where the sampler is smooth.
  NdArray pts({5, 2});
  std::uniform_real_distribution<double> cell(0.1, 0.9);
  for (std::size_t i = 0; i < 5; ++i) {
    pts.at(i, 0) = (static_cast<double>(i % 6) + cell(rng)) / 6.0;
    pts.at(i, 1) = (static_cast<double>((i * 2) % 5) + cell(rng)) / 5.0;
  }
  auto wrt_map = [&](const Var& f) { return weighted_sum(bilinear_sample(f, pts), 15); };
  CHECK(check_gradient(wrt_map, fm).max_rel_error <= kOpTolerance);

  SUBCASE("plain sampler sends nothing to the points") {
    const Var p = variable(pts);
    backward(weighted_sum(bilinear_sample(constant(fm), stop_gradient(p).value()), 15));
    for (double g : p.grad().values()) CHECK(g == 0.0);
  }
  SUBCASE("differentiable sampler matches differences in both inputs") {
    auto wrt_points = [&](const Var& p) { return weighted_sum(bilinear_sample_differentiable(constant(fm), p), 15); };
    auto wrt_map_d = [&](const Var& f) { return weighted_sum(bilinear_sample_differentiable(f, constant(pts)), 15); };
    CHECK(check_gradient(wrt_points, pts).max_rel_error <= kOpTolerance);
    CHECK(check_gradient(wrt_map_d, fm).max_rel_error <= kOpTolerance);
    CHECK(bilinear_sample_differentiable(constant(fm), constant(pts)).value() ==
          bilinear_sample(constant(fm), pts).value());
  }
}

TEST_CASE("forward ops are finite on finite inputs") {
  std::mt19937_64 rng(16);
  const NdArray x = random_array({2, 6, 6}, rng, -1e3, 1e3);
  const NdArray k = random_array({2, 2, 3, 3}, rng);
  const Var y = relu(conv2d(constant(x), constant(k), 1, 1));
  for (double v : y.value().values()) CHECK(std::isfinite(v));
}
