#include <cmath>
#include <vector>

#include "doctest.h"
#include "hbm/errors.hpp"
#include "hbm/loss_metrics.hpp"
#include "oracles.hpp"

using namespace hbm;

TEST_CASE("class_weights") {
  const std::vector<std::size_t> balanced{100, 100};
  CHECK(class_weights(balanced).weights == std::vector<double>{1.0, 1.0});
  const std::vector<std::size_t> skewed{150, 50};
  const auto w = class_weights(skewed);
  CHECK(w[0] == doctest::Approx(200.0 / 300.0));
  CHECK(w[1] == doctest::Approx(2.0));
  CHECK((150 * w[0] + 50 * w[1]) / 200.0 == doctest::Approx(1.0));
  const std::vector<std::size_t> one{10};
  CHECK_THROWS_AS(class_weights(one), ConfigError);
  const std::vector<std::size_t> missing{10, 0};
  CHECK_THROWS_AS(class_weights(missing), ConfigError);
}

TEST_CASE("weighted_ce") {
  const ClassWeights unit{{1.0, 1.0}};
  const std::vector<float> flat{0.0f, 0.0f};
  CHECK(weighted_ce(flat, 0, unit).loss == doctest::Approx(std::log(2.0)));

  const ClassWeights heavy{{2.0, 1.0}};
  const std::vector<float> tilted{1.0f, 0.0f};
  // 2 * ln(1 + e^-1)
  CHECK(weighted_ce(tilted, 0, heavy).loss == doctest::Approx(0.6265233750364457).epsilon(1e-9));

  CHECK_THROWS_AS(weighted_ce(flat, 2, unit), IndexError);

  SUBCASE("gradient matches finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<float> logits(3);
      for (float& v : logits) v = static_cast<float>(rng.normal() * 2.0);
      const ClassWeights w{{0.5, 1.5, 1.0}};
      const std::size_t y = rng.below(3);
      const auto out = weighted_ce(logits, y, w);
      CHECK(out.loss >= 0.0);
      for (std::size_t k = 0; k < 3; ++k) {
        // Exact-double evaluation of the loss as an independent oracle.
        auto f = [&](double delta) {
          double mx = -1e300, z = 0.0;
          std::vector<double> t(logits.begin(), logits.end());
          t[k] += delta;
          for (double v : t) mx = std::max(mx, v);
          for (double v : t) z += std::exp(v - mx);
          return w[y] * (mx + std::log(z) - t[y]);
        };
        const double h = 1e-4;
        const double numeric = (f(h) - f(-h)) / (2 * h);
        CHECK(std::abs(out.dlogits[k] - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric)));
      }
    }
  }
}

TEST_CASE("auc") {
  const std::vector<double> sep{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> lab{1, 1, 0, 0};
  CHECK(auc(sep, lab) == 1.0);

  const std::vector<double> hand{0.9, 0.3, 0.2, 0.8};
  const std::vector<int> hand_labels{1, 1, 0, 0};
  CHECK(auc(hand, hand_labels) == 0.75);

  const std::vector<double> tied{0.4, 0.4, 0.4, 0.4};
  CHECK(auc(tied, lab) == 0.5);

  const std::vector<int> one_class{1, 1, 1, 1};
  CHECK_THROWS_AS(auc(sep, one_class), MetricError);
}

TEST_CASE("auc properties on random instances") {
  Rng rng(2021);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 1;
    labels[1] = 0;
    const double a = auc(scores, labels);
    CHECK(a == oracle::brute_force_auc(scores, labels));

    std::vector<int> flipped(n);
    for (std::size_t i = 0; i < n; ++i) flipped[i] = 1 - labels[i];
    CHECK(a + auc(scores, flipped) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> transformed(n);
    for (std::size_t i = 0; i < n; ++i) transformed[i] = std::exp(3.0 * scores[i]) - 7.0;
    CHECK(auc(transformed, labels) == a);
  }
}

TEST_CASE("mann_whitney_u") {
  const std::vector<double> a{1, 2}, b{3, 4};
  const auto r = mann_whitney_u(a, b);
  CHECK(r.u == 0.0);
  CHECK(r.exact);
  CHECK(r.p_two_sided == doctest::Approx(2.0 / 6.0));
  CHECK(mann_whitney_u(b, a).p_two_sided == doctest::Approx(r.p_two_sided));

  const std::vector<double> same{3.0, 1.0, 2.0, 5.0};
  CHECK(mann_whitney_u(same, same).p_two_sided >= 0.99);

  std::vector<double> big(30);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i % 7);
  CHECK(mann_whitney_u(big, big).p_two_sided >= 0.99);

  const std::vector<double> empty;
  CHECK_THROWS_AS(mann_whitney_u(empty, a), MetricError);

  SUBCASE("normal approximation matches a reference implementation") {
    // Reference values: tie-corrected asymptotic test with continuity
    // correction, computed with scipy.stats.mannwhitneyu.
    const std::vector<double> x{1.2, 3.4, 2.2, 5.0, 4.4, 3.3};
    const std::vector<double> y{0.5, 1.1, 2.2, 0.9, 1.7, 2.8};
    const auto res = mann_whitney_u(x, y);
    CHECK_FALSE(res.exact);
    CHECK(res.u == 31.5);
    CHECK(res.p_two_sided == doctest::Approx(0.037040730591937965).epsilon(1e-12));

    std::vector<double> lo, hi;
    for (int i = 1; i <= 20; ++i) {
      lo.push_back(i);
      hi.push_back(i + 7.5);
    }
    const auto res2 = mann_whitney_u(lo, hi);
    CHECK(res2.u == 78.0);
    CHECK(res2.p_two_sided == doctest::Approx(0.0010140986852160438).epsilon(1e-12));
  }

  SUBCASE("exact p equals pair-counting enumeration") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t na = 1 + rng.below(5);
      const std::size_t nb = 1 + rng.below(10 - na);
      std::vector<double> ga(na), gb(nb);
      for (double& v : ga) v = static_cast<double>(rng.below(5));
      for (double& v : gb) v = static_cast<double>(rng.below(5));
      const auto res = mann_whitney_u(ga, gb);
      CHECK(res.exact);
      CHECK(res.u == oracle::brute_force_u(ga, gb));
      CHECK(res.p_two_sided == doctest::Approx(oracle::exact_mann_whitney_p(ga, gb)).epsilon(1e-12));
      CHECK(mann_whitney_u(gb, ga).p_two_sided == doctest::Approx(res.p_two_sided).epsilon(1e-12));
    }
  }
}
