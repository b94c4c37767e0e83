#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "mfnet/routing_oepa.hpp"
#include "mfnet/rng.hpp"

using namespace mfnet;

namespace {

std::vector<Point> ppp_box(RandomStream& rng, double lambda, double x0, double x1, double y0,
                           double y1) {
  const double area = (x1 - x0) * (y1 - y0);
  const auto n = rng.poisson(lambda * area);
  std::vector<Point> pts(n);
  for (auto& p : pts) {
    p.x = rng.uniform(x0, x1);
    p.y = rng.uniform(y0, y1);
  }
  return pts;
}

}  // namespace

TEST_CASE("route planning basics") {
  SECTION("distance equal to r0 gives a direct link") {
    const auto plan = plan_route({0, 0}, {1, 0}, 1.0, {});
    CHECK(plan.hop_count() == 1);
    CHECK(plan.hop_distances[0] == Catch::Approx(1.0));
  }
  SECTION("2.5 hop lengths give two relays at the ideal points") {
    std::vector<Point> nodes = {{1.0, 0.0}, {2.0, 0.0}, {10.0, 10.0}};
    const auto plan = plan_route({0, 0}, {2.5, 0}, 1.0, nodes);
    REQUIRE(plan.hop_count() == 3);
    CHECK(plan.hops[1] == 0);
    CHECK(plan.hops[2] == 1);
    CHECK(plan.deviations[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(plan.deviations[1] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("nodes exactly on the ideal points have zero deviation") {
    std::vector<Point> nodes;
    for (int j = 1; j < 5; ++j) nodes.push_back({j * 0.8, 0.0});
    const auto plan = plan_route({0, 0}, {4.0, 0}, 0.8, nodes);
    for (double d : plan.deviations) CHECK(d == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("relays required without nodes is an error") {
    CHECK_THROWS_AS(plan_route({0, 0}, {5, 0}, 1.0, {}), ConfigError);
  }
  SECTION("duplicate relays collapse") {
    std::vector<Point> nodes = {{1.5, 0.0}};
    const auto plan = plan_route({0, 0}, {3.0, 0}, 1.0, nodes);
    CHECK(plan.hop_count() == 2);  // source -> node -> destination
  }
}

TEST_CASE("relay choice is the exhaustive nearest neighbor") {
  RandomStream rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    auto nodes = ppp_box(rng, 2.0, -1.0, 4.0, -2.0, 2.0);
    if (nodes.size() < 3) continue;
    NodeIndex index(nodes);
    const Point q{rng.uniform(0.0, 3.0), rng.uniform(-1.0, 1.0)};
    const int pick = index.nearest(q);
    double best = std::numeric_limits<double>::infinity();
    int want = -1;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double d = std::hypot(nodes[i].x - q.x, nodes[i].y - q.y);
      if (d < best) {
        best = d;
        want = static_cast<int>(i);
      }
    }
    CHECK(pick == want);
  }
}

TEST_CASE("hop count law") {
  SECTION("printed atoms for r0 = d0, Nm = 2") {
    const auto pmf = hop_count_pmf(1.0, 1.0, 2);
    REQUIRE(pmf.size() == 2);
    CHECK(pmf[0] == Catch::Approx(0.25));
    CHECK(pmf[1] == Catch::Approx(0.75));
  }
  SECTION("whole-area reach collapses to one hop") {
    const auto pmf = hop_count_pmf(2.0, 1.0, 2);
    REQUIRE(pmf.size() == 1);
    CHECK(pmf[0] == 1.0);
  }
  SECTION("residual mass lands on the final atom") {
    const auto pmf = hop_count_pmf(0.7, 1.0, 2);
    REQUIRE(pmf.size() == 3);
    CHECK(pmf[0] == Catch::Approx(0.1225));
    CHECK(pmf[1] == Catch::Approx(0.3675));
    CHECK(pmf[2] == Catch::Approx(1.0 - 0.1225 - 0.3675));
    double s = 0.0;
    for (double p : pmf) s += p;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-15));
  }
  SECTION("invalid r0") {
    CHECK_THROWS_AS(hop_count_pmf(0.0, 1.0, 2), ConfigError);
  }
  SECTION("monte carlo hop counts from routed links") {
    RandomStream rng(787);
    const double lambda = 10.0;
    const double r0 = 1.0;
    const int Nm = 4;
    std::vector<double> counts;
    const int samples = 30000;
    std::vector<Point> nodes;
    std::unique_ptr<NodeIndex> index;
    for (int s = 0; s < samples; ++s) {
      if (s % 500 == 0) {
        nodes = ppp_box(rng, lambda, -2.0, 8.0, -5.0, 5.0);
        index = std::make_unique<NodeIndex>(nodes);
      }
      const double d = Nm * std::sqrt(rng.uniform());
      const double ang = rng.uniform(0.0, 2.0 * kPi);
      const Point dest{3.0 + d * std::cos(ang) * 0.5, d * std::sin(ang) * 0.5};
      const Point src{3.0 - d * std::cos(ang) * 0.5, -d * std::sin(ang) * 0.5};
      const auto plan = plan_route(src, dest, r0, nodes, *index);
      const std::size_t hops = static_cast<std::size_t>(plan.hop_count());
      if (counts.size() < hops) counts.resize(hops, 0.0);
      counts[hops - 1] += 1.0;
    }
    const auto pmf = hop_count_pmf(r0, 1.0, Nm);
    double tv = 0.0;
    for (std::size_t a = 0; a < std::max(counts.size(), pmf.size()); ++a) {
      const double emp = a < counts.size() ? counts[a] / samples : 0.0;
      const double ana = a < pmf.size() ? pmf[a] : 0.0;
      tv += 0.5 * std::abs(emp - ana);
    }
    CHECK(tv < 0.02);
  }
}

TEST_CASE("deviation law") {
  CHECK(deviation_sigma_squared(1.0 / (2.0 * kPi)) == Catch::Approx(1.0));
  CHECK(deviation_sigma_squared(1.0) == Catch::Approx(0.15915494309));
  CHECK_THROWS_AS(deviation_sigma_squared(0.0), ConfigError);

  SECTION("kolmogorov-smirnov against the rayleigh law") {
    RandomStream rng(909);
    const double lambda = 2.0;
    const int n = 10000;
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
      const auto nodes = ppp_box(rng, lambda, -3.0, 3.0, -3.0, 3.0);
      if (nodes.empty()) {
        d[static_cast<std::size_t>(s)] = 3.0;
        continue;
      }
      NodeIndex index(nodes);
      const int pick = index.nearest({0.0, 0.0});
      d[static_cast<std::size_t>(s)] = std::hypot(nodes[static_cast<std::size_t>(pick)].x,
                                                  nodes[static_cast<std::size_t>(pick)].y);
    }
    std::sort(d.begin(), d.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
      const double f = 1.0 - std::exp(-lambda * kPi * d[static_cast<std::size_t>(i)] *
                                      d[static_cast<std::size_t>(i)]);
      ks = std::max(ks, std::abs(f - (i + 1.0) / n));
      ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
    }
    CHECK(ks < 1.628 / std::sqrt(static_cast<double>(n)));  // the 1% critical value
  }
}

TEST_CASE("hop portions") {
  SECTION("single-hop geometry") {
    const auto [en, er] = hop_portions(2.0, 1.0, 2);
    CHECK(en == Catch::Approx(1.0));
    CHECK(er == Catch::Approx(0.0));
  }
  SECTION("two-ring case keeps only endpoint hops") {
    const auto [en, er] = hop_portions(1.0, 1.0, 2);
    CHECK(en == Catch::Approx(1.0));  // 0.25 + (2/2) * 0.75
    CHECK(er == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("portions always sum to one") {
    for (double r0 : {0.3, 0.7, 1.0, 1.7}) {
      const auto [en, er] = hop_portions(r0, 1.0, 5);
      CHECK(en + er == Catch::Approx(1.0).epsilon(1e-14));
      CHECK(en >= 0.0);
      CHECK(er >= 0.0);
    }
  }
}

TEST_CASE("single hop distance law") {
  SECTION("single bin holds everything") {
    const auto dist = single_hop_pmf(1.0, 10.0, {1.0}, 0.6);
    REQUIRE(dist.eps.size() == 1);
    CHECK(dist.eps[0] == Catch::Approx(1.0));
  }
  SECTION("symmetric grid gives a symmetric law") {
    const auto dist = single_hop_pmf(1.0, 10.0, {0.8, 1.0, 1.2}, 0.5);
    CHECK(dist.eps[0] == Catch::Approx(dist.eps[2]).epsilon(1e-10));
    CHECK(sum(dist.eps) == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("quantization keeps the mean at r0 within a bin width") {
    const double r0 = 1.0;
    const auto grid = default_ds_grid(r0, 10.0);
    const auto dist = single_hop_pmf(r0, 10.0, grid, 0.4);
    const double bin = grid[1] - grid[0];
    CHECK(std::abs(dist.mean() - r0) < bin);
  }
  SECTION("warns when the spread crowds r0") {
    const auto dist = single_hop_pmf(0.3, 1.0, {0.2, 0.3, 0.4}, 0.5);
    CHECK(dist.sigma_warning);
  }
}

TEST_CASE("lemma 4 moments and the quantized law against simulation") {
  RandomStream rng(515);
  const double r0 = 1.0;

  SECTION("endpoint hop: mean near r0, variance near 1/(2 pi lambda)") {
    for (double lambda : {5.0, 10.0, 20.0}) {
      const int n = 30000;
      double s1 = 0.0, s2 = 0.0;
      for (int t = 0; t < n; ++t) {
        const auto nodes = ppp_box(rng, lambda, 0.0, 2.0, -1.0, 1.0);
        if (nodes.empty()) continue;
        NodeIndex index(nodes);
        const int pick = index.nearest({1.0, 0.0});
        const double d = std::hypot(nodes[static_cast<std::size_t>(pick)].x,
                                    nodes[static_cast<std::size_t>(pick)].y);
        s1 += d;
        s2 += d * d;
      }
      const double mean = s1 / n;
      const double var = s2 / n - mean * mean;
      CHECK(std::abs(mean - r0) < 0.02 * r0);
      CHECK(std::abs(var - 1.0 / (2.0 * kPi * lambda)) < 0.10 / (2.0 * kPi * lambda));
    }
  }

  SECTION("relay-relay hop variance near 1/(pi lambda)") {
    const double lambda = 10.0;
    const int n = 40000;
    double s1 = 0.0, s2 = 0.0;
    for (int t = 0; t < n; ++t) {
      const auto nodes = ppp_box(rng, lambda, -1.0, 3.0, -1.0, 1.0);
      if (nodes.size() < 2) continue;
      NodeIndex index(nodes);
      const int a = index.nearest({0.0, 0.0});
      const int b = index.nearest({1.0, 0.0});
      if (a == b) continue;
      const double d = std::hypot(nodes[static_cast<std::size_t>(a)].x - nodes[static_cast<std::size_t>(b)].x,
                                  nodes[static_cast<std::size_t>(a)].y - nodes[static_cast<std::size_t>(b)].y);
      s1 += d;
      s2 += d * d;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(var - 1.0 / (kPi * lambda)) < 0.10 / (kPi * lambda));
  }

  SECTION("routed hop distances match the quantized law in total variation") {
    const double lambda = 10.0;
    const int Nm = 5;
    const auto [eta_n, eta_r] = hop_portions(r0, 1.0, Nm);
    const auto grid = default_ds_grid(r0, lambda);
    const auto model = single_hop_pmf(r0, lambda, grid, eta_n);
    const auto hop_law = hop_count_pmf(r0, 1.0, Nm);
    const auto hop_cum = cumulative_weights(hop_law);

    std::vector<double> counts(grid.size(), 0.0);
    double total = 0.0;
    while (total < 20000.0) {
      const auto nodes = ppp_box(rng, lambda, -2.0, Nm + 2.0, -2.0, 2.0);
      if (nodes.size() < 4) continue;
      NodeIndex index(nodes);
      // Ideal geometry: the link length is an integer number of hop lengths.
      const int hops = static_cast<int>(rng.categorical(hop_cum)) + 1;
      const auto plan = plan_route({0.0, 0.0}, {hops * r0, 0.0}, r0, nodes, index);
      for (double d : plan.hop_distances) {
        std::size_t bin = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < grid.size(); ++i) {
          if (std::abs(grid[i] - d) < best) {
            best = std::abs(grid[i] - d);
            bin = i;
          }
        }
        counts[bin] += 1.0;
        total += 1.0;
      }
    }
    double tv = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i)
      tv += 0.5 * std::abs(counts[i] / total - model.eps[i]);
    CHECK(tv < 0.05);
  }
}
