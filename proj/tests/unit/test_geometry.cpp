#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pisa/geometry.hpp"

using namespace pisa;

TEST_CASE("iou basic values") {
  CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
  CHECK(iou({0, 0, 2, 2}, {4, 4, 6, 6}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  // touching edges and degenerate boxes
  CHECK(iou({0, 0, 2, 2}, {2, 0, 4, 2}) == 0.0);
  CHECK(iou({1, 1, 1, 1}, {1, 1, 1, 1}) == 0.0);
  CHECK(iou({0, 0, 0, 5}, {0, 0, 3, 5}) == 0.0);
}

TEST_CASE("iou fuzz: symmetric, bounded, matches area oracle") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto a = oracle::random_box(rng, 100, 1, 60);
    const auto b = oracle::random_box(rng, 100, 1, 60);
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
    CHECK(v == doctest::Approx(oracle::box_iou(a, b)).epsilon(1e-12));
    CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("encode_delta hand values") {
  const Delta z = encode_delta({3, 4, 9, 12}, {3, 4, 9, 12});
  CHECK(z == Delta{0, 0, 0, 0});
  const Delta d = encode_delta({0, 0, 2, 2}, {0, 0, 4, 4});
  CHECK(d.dx == doctest::Approx(0.5));
  CHECK(d.dy == doctest::Approx(0.5));
  CHECK(d.dw == doctest::Approx(std::log(2.0)));
  CHECK(d.dh == doctest::Approx(std::log(2.0)));
  const BBox back = apply_delta({0, 0, 2, 2}, d);
  CHECK(back.x1 == doctest::Approx(0.0));
  CHECK(back.x2 == doctest::Approx(4.0));
  CHECK(back.y2 == doctest::Approx(4.0));
}

TEST_CASE("encode_delta rejects zero-extent source") {
  CHECK_THROWS_AS(encode_delta({1, 1, 1, 5}, {0, 0, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(encode_delta({1, 1, 5, 1}, {0, 0, 2, 2}), std::invalid_argument);
}

TEST_CASE("apply_delta round trip and clamp") {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto src = oracle::random_box(rng, 500, 4, 200);
    const auto dst = oracle::random_box(rng, 500, 4, 200);
    const BBox r = apply_delta(src, encode_delta(src, dst));
    worst = std::max({worst, std::abs(r.x1 - dst.x1), std::abs(r.y1 - dst.y1), std::abs(r.x2 - dst.x2),
                      std::abs(r.y2 - dst.y2)});
  }
  CHECK(worst < 1e-9);

  const BBox src{10, 10, 20, 30};
  CHECK(apply_delta(src, {}) == src);
  const BBox big = apply_delta(src, {0, 0, 80, 80});
  CHECK(std::isfinite(big.x1));
  CHECK(std::isfinite(big.y2));
  CHECK(big.width() == doctest::Approx(10 * 1000.0 / 16.0));
  CHECK(big.height() == doctest::Approx(20 * 1000.0 / 16.0));
}

TEST_CASE("smooth_l1 branches and smoothness") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(2.0) == 1.5);
  CHECK(smooth_l1(-2.0) == 1.5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 500; ++i) {
    const double x = u(rng);
    CHECK(smooth_l1(x) == smooth_l1(-x));
    const double h = 1e-6;
    CHECK(smooth_l1_grad(x) == doctest::Approx((smooth_l1(x + h) - smooth_l1(x - h)) / (2 * h)).epsilon(1e-6));
  }
  for (double x = 0.0; x < 4.0; x += 0.01) CHECK(smooth_l1(x + 0.01) >= smooth_l1(x));
  // derivative is continuous across |x| = 1
  const double h = 1e-7;
  CHECK(std::abs(smooth_l1_grad(1 - h) - smooth_l1_grad(1 + h)) < 1e-6);
  CHECK(std::abs((smooth_l1(1 + h) - smooth_l1(1)) / h - (smooth_l1(1) - smooth_l1(1 - h)) / h) < 1e-6);
}
