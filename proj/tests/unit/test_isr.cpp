#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "pisa/hlr.hpp"
#include "pisa/isr.hpp"
#include "pisa/losses.hpp"

using namespace pisa;

TEST_CASE("rank_to_importance shares n_max across classes") {
  std::vector<int> ten(10), four(4);
  std::iota(ten.begin(), ten.end(), 0);
  std::iota(four.begin(), four.end(), 0);
  const auto u = rank_to_importance({four, ten});
  CHECK(u[1][0] == 1.0);
  CHECK(u[1][5] == 0.5);
  CHECK(u[0][2] == doctest::Approx(0.8));
  CHECK(u[0][2] == u[1][2]);
  CHECK(rank_to_importance({}).empty());
}

TEST_CASE("importance_to_weight") {
  CHECK(importance_to_weight(1.0, 2.0, 0.0) == 1.0);
  CHECK(importance_to_weight(1.0, 0.5, 0.3) == doctest::Approx(1.0));
  CHECK(importance_to_weight(0.5, 2.0, 0.0) == 0.25);
  CHECK(importance_to_weight(0.0, 1.0, 0.2) == doctest::Approx(0.2));
  CHECK_THROWS_AS(importance_to_weight(0.5, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(importance_to_weight(0.5, -1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(importance_to_weight(0.5, 1.0, 1.0), std::invalid_argument);
  for (double g : {0.25, 1.0, 3.0})
    for (double b : {0.0, 0.3}) {
      double prev = 0.0;
      for (int i = 0; i <= 100; ++i) {
        const double w = importance_to_weight(i / 100.0, g, b);
        CHECK(w >= prev);
        CHECK(w >= std::pow(b, g) - 1e-15);
        CHECK(w <= 1.0 + 1e-15);
        prev = w;
      }
    }
}

TEST_CASE("normalize_weights") {
  std::vector<double> ce{1, 1}, w{1, 3};
  const auto n = normalize_weights(w, ce);
  CHECK(n[0] == 0.5);
  CHECK(n[1] == 1.5);
  std::vector<double> same{0.3, 0.3, 0.3}, ce3{0.2, 1.0, 4.0};
  for (double x : normalize_weights(same, ce3)) CHECK(x == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> zero{0, 0};
  CHECK(normalize_weights(w, zero) == w);

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 5);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> ww(40), cc(40);
    for (auto& x : ww) x = u(rng);
    for (auto& x : cc) x = u(rng);
    const auto wn = normalize_weights(ww, cc);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < cc.size(); ++i) a += wn[i] * cc[i], b += cc[i];
    CHECK(std::abs(a - b) < 1e-9);
  }
}

TEST_CASE("isr_weights: separate normalization, monotone in rank") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 50; ++t) {
    const auto b = fixture::random_batch(rng, 2);
    const auto ce = weighted_ce(b.logits, [&] {
      std::vector<int> tg(b.size());
      for (std::size_t i = 0; i < b.size(); ++i) tg[i] = b.assignment[i].target_class;
      return tg;
    }(), std::vector<double>(b.size(), 1.0)).per_sample;
    const auto ws = isr_weights(b, ce, {});
    double wp = 0, cp = 0, wn = 0, cn = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.is_positive(i)) wp += ws.w_norm[i] * ce[i], cp += ce[i];
      if (b.is_negative(i)) wn += ws.w_norm[i] * ce[i], cn += ce[i];
    }
    CHECK(std::abs(wp - cp) < 1e-9);
    CHECK(std::abs(wn - cn) < 1e-9);

    // within a class, a better HLR rank never gets a smaller raw weight
    for (std::size_t i = 0; i < b.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (ws.class_id[i] != ws.class_id[j] || b.assignment[i].label != b.assignment[j].label) continue;
        if (b.assignment[i].label == SampleLabel::kIgnored) continue;
        if (ws.u[i] > ws.u[j]) CHECK(ws.w[i] >= ws.w[j]);
      }
  }
}

TEST_CASE("isr_weights with gamma zero is uniform") {
  std::mt19937_64 rng(13);
  const auto b = fixture::random_batch(rng);
  std::vector<double> ce(b.size(), 0.7);
  const auto ws = isr_weights(b, ce, {.gamma_pos = 0.0, .gamma_neg = 0.0});
  for (std::size_t i = 0; i < b.size(); ++i)
    if (!(b.assignment[i].label == SampleLabel::kIgnored)) CHECK(ws.w_norm[i] == 1.0);
}

TEST_CASE("isr_weights disabled sides are untouched") {
  std::mt19937_64 rng(14);
  const auto b = fixture::random_batch(rng);
  std::vector<double> ce(b.size(), 1.3);
  const auto ws = isr_weights(b, ce, {.enable_pos = false, .enable_neg = true});
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.is_positive(i)) CHECK(ws.w_norm[i] == 1.0);
}
