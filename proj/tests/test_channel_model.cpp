#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "mfnet/channel_model.hpp"
#include "mfnet/rng.hpp"

using namespace mfnet;

namespace {

NetworkConfig paper_config() {
  NetworkConfig c;
  c.lambda = 1.0;
  c.area_side = 30.0;
  c.d0 = 1.0;
  c.Nm = 2;
  c.NmI = 10;
  c.alpha = 3.0;
  c.noise = 10.0;
  c.fading_levels = {{4.6045, 0.25}, {1.9805, 0.25}, {0.9392, 0.25}, {0.2412, 0.25}};
  c.p_max = 0.1;
  c.Na = 1;
  c.Nc = 2;
  return c;
}

}  // namespace

TEST_CASE("distance_pmf matches the ring construction") {
  CHECK(distance_pmf(1) == std::vector<double>{1.0});
  const auto g2 = distance_pmf(2);
  CHECK(g2[0] == Catch::Approx(0.25));
  CHECK(g2[1] == Catch::Approx(0.75));
  for (int nm : {1, 3, 7, 40}) {
    const auto g = distance_pmf(nm);
    double s = 0.0;
    for (double x : g) s += x;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(distance_pmf(0), ConfigError);
}

TEST_CASE("bounded path loss") {
  CHECK(path_loss(0.0, 3.0) == Catch::Approx(1.0));
  CHECK(path_loss(1.0, 3.0) == Catch::Approx(0.125));
  CHECK(path_loss(2.0, 3.0) == Catch::Approx(1.0 / 27.0));
  CHECK_THROWS_AS(path_loss(-0.1, 3.0), ConfigError);

  double prev = path_loss(0.0, 2.5);
  for (double d = 0.25; d < 20.0; d += 0.25) {
    const double cur = path_loss(d, 2.5);
    CHECK(cur < prev);
    CHECK(cur <= 1.0);
    prev = cur;
  }
}

TEST_CASE("direct gain distribution") {
  SECTION("singleton support") {
    NetworkConfig c = paper_config();
    c.fading_levels = {{1.0, 1.0}};
    c.Nm = 1;
    c.NmI = 1;
    const auto d = direct_gain_distribution(c);
    REQUIRE(d.gains.size() == 1);
    CHECK(d.gains[0] == Catch::Approx(0.125));
    CHECK(d.probs[0] == Catch::Approx(1.0));
  }
  SECTION("four-level table, Nm=2") {
    const auto d = direct_gain_distribution(paper_config());
    REQUIRE(d.gains.size() == 8);
    CHECK(d.gains[0] == Catch::Approx(4.6045 * 0.125).epsilon(1e-9));  // 0.575563
    CHECK(d.probs[0] == Catch::Approx(0.0625));
    double s = 0.0;
    for (double p : d.probs) s += p;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < d.gains.size(); ++i) CHECK(d.gains[i] <= d.gains[i - 1]);
  }
  SECTION("sorting preserves the gain-probability pairing") {
    NetworkConfig c = paper_config();
    c.Nm = 5;
    c.NmI = 12;
    const auto d = direct_gain_distribution(c);
    // Expected gain straight from the unsorted product law.
    const auto gamma = distance_pmf(c.Nm);
    double expect = 0.0;
    for (const auto& f : c.fading_levels)
      for (int l = 1; l <= c.Nm; ++l)
        expect += f.beta * gamma[static_cast<std::size_t>(l - 1)] * f.h * path_loss(l * c.d0, c.alpha);
    CHECK(d.mean() == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("interference gain distribution") {
  NetworkConfig c = paper_config();
  SECTION("single ring") {
    c.Nm = 1;
    c.NmI = 1;
    const auto d = interference_gain_distribution(c);
    REQUIRE(d.gains.size() == 4);
    double s = 0.0;
    for (double p : d.probs) s += p;
    CHECK(s == Catch::Approx(1.0));
  }
  SECTION("outermost ring of ten carries 19/100") {
    const auto gamma = distance_pmf(10);
    CHECK(gamma[9] == Catch::Approx(0.19));
    const auto d = interference_gain_distribution(c);
    CHECK(d.gains.size() == 4u * 10u);
  }
}

TEST_CASE("ppp sampling") {
  NetworkConfig c = paper_config();
  c.area_side = 10.0;

  SECTION("zero intensity gives an empty node set") {
    c.lambda = 0.0;
    CHECK(sample_ppp(c, 7).positions.empty());
  }
  SECTION("fixed seed is reproducible") {
    c.lambda = 1.0;
    const auto a = sample_ppp(c, 42);
    const auto b = sample_ppp(c, 42);
    REQUIRE(a.positions.size() == b.positions.size());
    for (std::size_t i = 0; i < a.positions.size(); ++i) {
      CHECK(a.positions[i].x == b.positions[i].x);
      CHECK(a.positions[i].y == b.positions[i].y);
    }
    const auto other = sample_ppp(c, 43);
    CHECK(other.positions.size() != a.positions.size());
  }
  SECTION("sample mean count is Poisson-consistent over many seeds") {
    c.lambda = 1.0;  // area 100 -> mean 100
    double total = 0.0;
    const int seeds = 10000;
    for (int s = 0; s < seeds; ++s) total += static_cast<double>(sample_ppp(c, 1000 + s).positions.size());
    const double mean = total / seeds;
    CHECK(mean > 97.0);
    CHECK(mean < 103.0);
  }
  SECTION("positions stay inside the area") {
    c.lambda = 2.0;
    const auto nodes = sample_ppp(c, 5);
    for (const auto& p : nodes.positions) {
      CHECK(p.x >= 0.0);
      CHECK(p.x <= c.area_side);
      CHECK(p.y >= 0.0);
      CHECK(p.y <= c.area_side);
    }
  }
}

TEST_CASE("empirical ring law from sampled geometry") {
  // Destinations drawn uniformly in the disk, distance quantized by ceiling,
  // checked against the analytic ring pmf in total variation.
  const int Nm = 4;
  const double d0 = 1.0;
  const auto gamma = distance_pmf(Nm);
  std::vector<double> counts(static_cast<std::size_t>(Nm), 0.0);
  RandomStream rng(2024);
  const int samples = 100000;
  for (int s = 0; s < samples; ++s) {
    const double r = Nm * d0 * std::sqrt(rng.uniform());
    const int k = ring_index(r, d0);
    counts[static_cast<std::size_t>(std::min(k, Nm) - 1)] += 1.0;
  }
  double tv = 0.0;
  for (int k = 0; k < Nm; ++k)
    tv += 0.5 * std::abs(counts[static_cast<std::size_t>(k)] / samples - gamma[static_cast<std::size_t>(k)]);
  CHECK(tv < 0.02);
}

TEST_CASE("rayleigh quantization reproduces the four-level table") {
  const auto levels = rayleigh_fading_levels(4);
  REQUIRE(levels.size() == 4);
  CHECK(levels[0].h == Catch::Approx(4.6045).margin(1e-3));
  CHECK(levels[1].h == Catch::Approx(1.9805).margin(1e-3));
  CHECK(levels[2].h == Catch::Approx(0.9392).margin(1e-3));
  CHECK(levels[3].h == Catch::Approx(0.2412).margin(1e-3));
  for (const auto& l : levels) CHECK(l.beta == Catch::Approx(0.25));
}

TEST_CASE("config json round trip and diagnostics") {
  NetworkConfig c = paper_config();
  c.p_ave = 0.05;
  const auto j = network_config_to_json(c);
  const auto back = network_config_from_json(j);
  CHECK(back.lambda == c.lambda);
  CHECK(back.NmI == c.NmI);
  CHECK(back.fading_levels.size() == 4);
  CHECK(back.p_ave.has_value());

  NetworkConfig bad = paper_config();
  bad.alpha = 2.0;
  const auto diags = bad.diagnostics();
  REQUIRE_FALSE(diags.empty());
  CHECK(diags.front().find("alpha") != std::string::npos);

  bad = paper_config();
  bad.fading_levels[0].beta = 0.15;  // sums to 0.9
  CHECK_FALSE(bad.diagnostics().empty());

  CHECK(paper_config().diagnostics().empty());
}

TEST_CASE("torus distance uses the minimum image") {
  Point a{0.5, 0.5};
  Point b{9.5, 9.5};
  CHECK(torus_distance(a, b, 10.0) == Catch::Approx(std::sqrt(2.0)));
  CHECK(torus_distance(a, a, 10.0) == 0.0);
}
