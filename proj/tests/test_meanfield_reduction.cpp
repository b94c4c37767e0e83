#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "mfnet/meanfield_reduction.hpp"
#include "mfnet/rng.hpp"

using namespace mfnet;

namespace {

NetworkConfig paper_config() {
  NetworkConfig c;
  c.lambda = 1.0;
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

// Interference at a destination in interference-group i, written as the raw
// triple sums over (gain index, source group, source state). Kept separate
// from the consolidated-matrix path on purpose.
double interference_triple_sum(int group_i, const std::vector<double>& power,
                               const InterferenceGroupTable& table,
                               const PosteriorTables& post,
                               const GainDistribution& direct) {
  const int Ng = static_cast<int>(direct.gains.size());
  const int NgI = static_cast<int>(table.gainsI.size());
  double total = 0.0;
  for (int t = 0; t < table.Na; ++t) {
    const double a = table.abar[t][table.u[group_i - 1][t] - 1];
    for (int l = 1; l <= table.NI; ++l)
      for (int m = 0; m < Ng; ++m)
        total += a * post.Q1[t][l - 1] * direct.probs[m] *
                 power[static_cast<std::size_t>(consolidate_index(l, m, Ng))] * table.gainsI[t];
  }
  for (int t = table.Na; t < NgI; ++t)
    for (int l = 1; l <= table.NI; ++l)
      for (int m = 0; m < Ng; ++m)
        total += table.Nr[group_i - 1] * table.probsI[t] * post.q[l - 1] * direct.probs[m] *
                 power[static_cast<std::size_t>(consolidate_index(l, m, Ng))] * table.gainsI[t];
  return total;
}

}  // namespace

TEST_CASE("interference count pmf") {
  SECTION("zero probability is a point mass at zero") {
    const auto pmf = interference_count_pmf(0.0, 6);
    CHECK(pmf[0] == 1.0);
    for (std::size_t i = 1; i < pmf.size(); ++i) CHECK(pmf[i] == 0.0);
  }
  SECTION("fair binomial on two trials") {
    const auto pmf = interference_count_pmf(0.5, 2);
    CHECK(pmf[0] == Catch::Approx(0.25));
    CHECK(pmf[1] == Catch::Approx(0.5));
    CHECK(pmf[2] == Catch::Approx(0.25));
  }
  SECTION("direct evaluation") {
    const auto pmf = interference_count_pmf(0.19, 4);
    CHECK(pmf[0] == Catch::Approx(std::pow(0.81, 4)).epsilon(1e-12));  // 0.430467
  }
  SECTION("normalization at large Ni") {
    const auto pmf = interference_count_pmf(0.0025, 2000);
    double s = 0.0;
    for (double p : pmf) s += p;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("count quantization") {
  SECTION("single interval is the whole pmf") {
    const auto pmf = interference_count_pmf(0.3, 5);
    const auto q = quantize_counts(pmf, 1);
    REQUIRE(q.intervals.size() == 1);
    CHECK(q.intervals[0] == std::pair<int, int>{0, 5});
    double mean = 0.0;
    for (std::size_t i = 0; i < pmf.size(); ++i) mean += i * pmf[i];
    CHECK(q.centroids[0] == Catch::Approx(mean).epsilon(1e-12));
  }
  SECTION("exact halves split cleanly") {
    const auto q = quantize_counts({0.5, 0.5}, 2);
    CHECK(q.intervals[0] == std::pair<int, int>{0, 0});
    CHECK(q.intervals[1] == std::pair<int, int>{1, 1});
    CHECK(q.centroids[0] == 0.0);
    CHECK(q.centroids[1] == 1.0);
  }
  SECTION("binomial(4, 1/2) halves at the cumulative boundary") {
    const auto pmf = interference_count_pmf(0.5, 4);  // 1 4 6 4 1 over 16
    const auto q = quantize_counts(pmf, 2);
    CHECK(q.intervals[0] == std::pair<int, int>{0, 2});
    CHECK(q.intervals[1] == std::pair<int, int>{3, 4});
    CHECK(q.centroids[0] == Catch::Approx(16.0 / 11.0));
    CHECK(q.centroids[1] == Catch::Approx(16.0 / 5.0));
    CHECK(q.masses[0] == Catch::Approx(11.0 / 16.0));
  }
  SECTION("law of total expectation holds for any partition") {
    const auto pmf = interference_count_pmf(0.23, 40);
    double mean = 0.0;
    for (std::size_t i = 0; i < pmf.size(); ++i) mean += i * pmf[i];
    for (int nc : {1, 2, 3, 5, 8}) {
      const auto q = quantize_counts(pmf, nc);
      double total = 0.0;
      for (std::size_t l = 0; l < q.centroids.size(); ++l) total += q.masses[l] * q.centroids[l];
      CHECK(total == Catch::Approx(mean).epsilon(1e-9));
    }
  }
  SECTION("more intervals than support points is rejected") {
    CHECK_THROWS_AS(quantize_counts({0.5, 0.5}, 3), ConfigError);
  }
}

TEST_CASE("group table construction") {
  NetworkConfig c = paper_config();
  const auto interf = interference_gain_distribution(c);

  SECTION("no tracked indices leaves a single residual group") {
    c.Na = 0;
    const auto t = build_group_table(c, interf);
    CHECK(t.NI == 1);
    CHECK(t.xi == 1.0);
    CHECK(t.Nr[0] == Catch::Approx(static_cast<double>(t.Ni)));
  }
  SECTION("one tracked index, two intervals") {
    const auto t = build_group_table(c, interf);
    REQUIRE(t.NI == 2);
    CHECK(t.u[0] == std::vector<int>{1});
    CHECK(t.u[1] == std::vector<int>{2});
    CHECK(t.xi == Catch::Approx(0.5));
  }
  SECTION("base-Nc encoding is bijective") {
    c.Na = 2;
    c.Nc = 2;
    const auto t = build_group_table(c, interf);
    REQUIRE(t.NI == 4);
    std::set<int> seen;
    for (int k = 1; k <= 4; ++k) {
      const auto u = intervals_of_group(k, 2, 2);
      CHECK(group_index_of(u, 2) == k);
      seen.insert(group_index_of(u, 2));
    }
    CHECK(seen.size() == 4);
  }
  SECTION("group cap guards the combinatorial blowup") {
    c.Na = 13;
    c.Nc = 2;  // 2^13 = 8192 > 4096
    CHECK_THROWS_AS(build_group_table(c, interf), SizeError);
  }
  SECTION("interferer count follows the disk area") {
    const auto t = build_group_table(c, interf);
    CHECK(t.Ni == static_cast<int>(std::ceil(c.lambda * kPi * 100.0)));
  }
}

TEST_CASE("posterior tables") {
  NetworkConfig c = paper_config();
  const auto interf = interference_gain_distribution(c);

  SECTION("single group means certainty") {
    c.Na = 0;
    const auto t = build_group_table(c, interf);
    const auto post = posterior_tables(t, interf);
    REQUIRE(post.q.size() == 1);
    CHECK(post.q[0] == 1.0);
    CHECK(post.Q1.empty());
  }
  SECTION("hand-built centroids 1 and 3 give the 1:3 posterior") {
    InterferenceGroupTable t;
    t.Ni = 4;
    t.Na = 1;
    t.Nc = 2;
    t.NI = 2;
    t.xi = 0.5;
    t.abar = {{1.0, 3.0}};
    t.intervals = {{{0, 1}, {2, 4}}};
    t.u = {{1}, {2}};
    t.Nr = {3.0, 1.0};
    t.gainsI = {0.5, 0.25};
    t.probsI = {0.5, 0.5};
    GainDistribution dummy;
    dummy.gains = t.gainsI;
    dummy.probs = t.probsI;
    const auto post = posterior_tables(t, dummy);
    CHECK(post.Q1[0][0] == Catch::Approx(0.25));
    CHECK(post.Q1[0][1] == Catch::Approx(0.75));
    CHECK(post.q[0] == Catch::Approx(0.75));
    CHECK(post.q[1] == Catch::Approx(0.25));
  }
  SECTION("identical centroid rows give uniform posteriors") {
    InterferenceGroupTable t;
    t.Ni = 10;
    t.Na = 1;
    t.Nc = 2;
    t.NI = 2;
    t.xi = 0.5;
    t.abar = {{2.0, 2.0}};
    t.intervals = {{{0, 2}, {3, 10}}};
    t.u = {{1}, {2}};
    t.Nr = {8.0, 8.0};
    t.gainsI = {0.5};
    t.probsI = {1.0};
    GainDistribution dummy;
    dummy.gains = t.gainsI;
    dummy.probs = t.probsI;
    const auto post = posterior_tables(t, dummy);
    CHECK(post.Q1[0][0] == Catch::Approx(0.5));
    CHECK(post.Q1[0][1] == Catch::Approx(0.5));
  }
  SECTION("rows are stochastic on a realistic table") {
    c.Na = 3;
    c.Nc = 2;
    const auto t = build_group_table(c, interf);
    const auto post = posterior_tables(t, interf);
    for (const auto& row : post.Q2) {
      double s = 0.0;
      for (double x : row) s += x;
      CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
    }
    for (const auto& row : post.Q1) {
      double s = 0.0;
      for (double x : row) s += x;
      CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
    }
    double s = 0.0;
    for (double x : post.q) s += x;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("bayes marginal check") {
    c.Na = 2;
    c.Nc = 3;
    const auto t = build_group_table(c, interf);
    const auto post = posterior_tables(t, interf);
    for (int j = 0; j < t.Na; ++j) {
      double via_q2 = 0.0;
      double direct = 0.0;
      for (int i = 0; i < t.NI; ++i) {
        double total = 0.0;
        for (int k = 0; k < t.Na; ++k) total += t.abar[k][t.u[i][k] - 1];
        via_q2 += t.xi * total * post.Q2[i][j];
        direct += t.xi * t.abar[j][t.u[i][j] - 1];
      }
      CHECK(via_q2 == Catch::Approx(direct).epsilon(1e-9));
    }
  }
  SECTION("degenerate tracked gain raises") {
    InterferenceGroupTable t;
    t.Ni = 4;
    t.Na = 1;
    t.Nc = 1;
    t.NI = 1;
    t.xi = 1.0;
    t.abar = {{0.0}};
    t.intervals = {{{0, 4}}};
    t.u = {{1}};
    t.Nr = {4.0};
    t.gainsI = {0.5};
    t.probsI = {1.0};
    GainDistribution dummy;
    dummy.gains = t.gainsI;
    dummy.probs = t.probsI;
    CHECK_THROWS_AS(posterior_tables(t, dummy), NumericalError);
  }
}

TEST_CASE("reduced problem assembly") {
  NetworkConfig c = paper_config();

  SECTION("weights sum to one and dimensions are consistent") {
    const auto w = wtm_from_config(c);
    CHECK(w.size() == 2 * 8);
    double s = 0.0;
    for (double x : w.omega) s += x;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-10));
    for (double g : w.g) CHECK(g > 0.0);
    for (double x : w.Gt) CHECK(x >= 0.0);
  }

  SECTION("no interference collapses the matrix to zero") {
    NetworkConfig z = c;
    z.Na = 0;
    z.Nc = 1;
    const auto interf = interference_gain_distribution(z);
    GainDistribution zero = interf;
    for (auto& g : zero.gains) g = 0.0;
    const auto table = build_group_table(z, zero);
    const auto post = posterior_tables(table, zero);
    const auto direct = direct_gain_distribution(z);
    const auto w = build_wtm(z, direct, table, post);
    for (double x : w.Gt) CHECK(x == 0.0);
  }

  SECTION("Na=0, Nc=1 reduces interference to the analytic collapse") {
    NetworkConfig z = c;
    z.Na = 0;
    z.Nc = 1;
    const auto w = wtm_from_config(z);
    const auto interf = interference_gain_distribution(z);
    const auto direct = direct_gain_distribution(z);
    const int Ni = interferer_count(z);

    RandomStream rng(11);
    std::vector<double> p(w.omega.size());
    for (auto& x : p) x = rng.uniform(0.0, z.p_max);

    double mean_power = 0.0;
    for (std::size_t m = 0; m < p.size(); ++m) mean_power += direct.probs[m] * p[m];
    const double expected = Ni * interf.mean() * mean_power;
    for (int i = 0; i < w.size(); ++i)
      CHECK(w.interference_at(i, p) == Catch::Approx(expected).epsilon(1e-9));
  }

  SECTION("consolidated matrix equals the raw triple sums") {
    for (auto [na, nc] : std::vector<std::pair<int, int>>{{1, 2}, {2, 2}, {1, 3}, {3, 2}}) {
      NetworkConfig z = c;
      z.Na = na;
      z.Nc = nc;
      z.NmI = 6;
      const auto direct = direct_gain_distribution(z);
      const auto interf = interference_gain_distribution(z);
      const auto table = build_group_table(z, interf);
      const auto post = posterior_tables(table, interf);
      const auto w = build_wtm(z, direct, table, post);

      RandomStream rng(static_cast<std::uint64_t>(1000 + na * 10 + nc));
      std::vector<double> p(w.omega.size());
      for (auto& x : p) x = rng.uniform(0.0, z.p_max);

      const int Ng = static_cast<int>(direct.gains.size());
      for (int i = 1; i <= table.NI; ++i) {
        const double raw = interference_triple_sum(i, p, table, post, direct);
        for (int j = 0; j < Ng; ++j) {
          const int k = consolidate_index(i, j, Ng);
          const double via_matrix = w.interference_at(k, p);
          CHECK(via_matrix == Catch::Approx(raw).epsilon(1e-9));
        }
      }
    }
  }

  SECTION("wtm json round trip") {
    NetworkConfig z = c;
    z.p_ave = 0.03;
    const auto w = wtm_from_config(z);
    const auto back = wtm_from_json(wtm_to_json(w));
    CHECK(back.omega == w.omega);
    CHECK(back.Gt == w.Gt);
    CHECK(back.p_ave.has_value());
    CHECK(*back.p_ave == 0.03);
  }
}

TEST_CASE("group assignment clamps out-of-range counts") {
  NetworkConfig c = paper_config();
  c.Na = 2;
  c.Nc = 2;
  const auto interf = interference_gain_distribution(c);
  const auto t = build_group_table(c, interf);
  std::vector<int> counts = {0, 0};
  const int g00 = assign_group(t, counts);
  CHECK(g00 >= 1);
  CHECK(g00 <= t.NI);
  counts = {t.Ni + 5, t.Ni + 5};  // beyond every interval: clamps to the last
  CHECK(assign_group(t, counts) == t.NI);
}
