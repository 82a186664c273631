#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pfkit/rng.hpp"
#include "pfkit/stats.hpp"

using namespace pfkit;

TEST_SUITE("stats") {

TEST_CASE("total variation basics") {
  LevelDistribution p{1, {2.0 / 3, 1.0 / 3}};
  LevelDistribution q{1, {0.5, 0.5}};
  CHECK(exact_tv(p, p) == 0.0);
  CHECK(exact_tv(p, q) == doctest::Approx(1.0 / 6).epsilon(1e-12));
  LevelDistribution a{1, {1.0, 0.0}};
  LevelDistribution b{1, {0.0, 1.0}};
  CHECK(exact_tv(a, b) == doctest::Approx(1.0));
  LevelDistribution c{2, {0.5, 0.5}};
  CHECK_THROWS_AS(exact_tv(p, c), DimensionMismatch);
}

TEST_CASE("total variation triangle inequality on random triples") {
  RngStream rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_below(6));
    auto draw = [&]() {
      LevelDistribution d{0, std::vector<double>(k)};
      double sum = 0.0;
      for (double& x : d.probs) {
        x = -std::log(1.0 - rng.next_unit());
        sum += x;
      }
      for (double& x : d.probs) x /= sum;
      return d;
    };
    LevelDistribution p = draw(), q = draw(), r = draw();
    CHECK(exact_tv(p, r) <= exact_tv(p, q) + exact_tv(q, r) + 1e-12);
  }
}

TEST_CASE("p_N oracle small cases by hand") {
  CHECK(p_n_oracle(1, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p_n_oracle(2, 1.0) == doctest::Approx(7.0 / 12).epsilon(1e-14));
  // Gap check: p − p_2 = 1/12 ≥ c_λ/2 = (4/27)/2.
  CHECK(2.0 / 3 - p_n_oracle(2, 1.0) == doctest::Approx(1.0 / 12).epsilon(1e-12));
  CHECK(1.0 / 12 >= 4.0 / 27 / 2);
}

TEST_CASE("p_N is monotone in N and converges to the target bias") {
  double prev = 0.0;
  for (int n = 1; n <= 1024; n *= 2) {
    const double p = p_n_oracle(n, 1.0);
    CHECK(p > prev);
    CHECK(p <= 2.0 / 3 - (4.0 / 27) / n + 1e-12);
    prev = p;
  }
  CHECK(prev > 2.0 / 3 - 1e-3);
}

TEST_CASE("empirical finals count and merge") {
  EmpiricalFinal a;
  a.resize(2);
  a.trials = 4;
  a.counts = {3, 1};
  LevelDistribution d = a.distribution(2);
  CHECK(d.probs[0] == doctest::Approx(0.75));
  CHECK(a.standard_errors()[0] == doctest::Approx(std::sqrt(0.75 * 0.25 / 4)));

  EmpiricalFinal b;
  b.resize(2);
  b.trials = 2;
  b.counts = {0, 2};
  EmpiricalFinal ab = a;
  ab.merge(b);
  EmpiricalFinal ba = b;
  ba.merge(a);
  CHECK(ab.counts == ba.counts);
  CHECK(ab.trials == 6);

  EmpiricalFinal dead;
  dead.resize(2);
  dead.trials = 5;
  dead.dead_runs = 5;
  CHECK(dead.completed() == 0);
  CHECK_THROWS_AS(dead.distribution(2), DegenerateLevel);

  EmpiricalFinal wrong;
  wrong.resize(3);
  CHECK_THROWS_AS(ab.merge(wrong), MixedConfig);
}

TEST_CASE("chi-square survival function sanity") {
  CHECK(chi_square_sf(0.0, 3) == 1.0);
  CHECK(chi_square_sf(0.4549, 1) == doctest::Approx(0.5).epsilon(2e-3));
  CHECK(chi_square_sf(100.0, 3) < 1e-12);
  // dof=2 has closed form exp(-x/2).
  for (double x : {0.5, 1.0, 3.0, 7.0})
    CHECK(chi_square_sf(x, 2) == doctest::Approx(std::exp(-x / 2)).epsilon(1e-10));
}

TEST_CASE("two-sample test is calibrated under the null") {
  std::vector<double> pvals;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    RngStream rng = derive_stream(909, {seed});
    std::vector<long long> a(6, 0), b(6, 0);
    const std::vector<double> probs = {0.3, 0.25, 0.2, 0.1, 0.1, 0.05};
    for (int i = 0; i < 2000; ++i) {
      ++a[sample_index(rng, probs)];
      ++b[sample_index(rng, probs)];
    }
    pvals.push_back(gof_two_sample(a, b).p_value);
  }
  std::sort(pvals.begin(), pvals.end());
  const double median = pvals[50];
  CHECK(median >= 0.3);
  CHECK(median <= 0.7);
}

TEST_CASE("one-sample test has power against a wrong reference") {
  RngStream rng(7);
  std::vector<long long> counts(2, 0);
  for (int i = 0; i < 1000; ++i) ++counts[rng.next_unit() < 0.5 ? 0 : 1];
  GofResult r = gof_one_sample(counts, std::vector<double>{0.9, 0.1});
  CHECK(r.p_value < 1e-6);
}

TEST_CASE("degenerate tables are rejected") {
  std::vector<long long> single = {100};
  std::vector<double> one = {1.0};
  CHECK_THROWS_AS(gof_one_sample(single, one), InsufficientData);
  std::vector<long long> small = {3, 4};
  CHECK_THROWS_AS(gof_two_sample(small, small), InsufficientData);
}

TEST_CASE("tv standard error shrinks with n and tracks the binomial case") {
  std::vector<double> emp = {0.7, 0.3};
  std::vector<double> ref = {0.5, 0.5};
  // Two cells: TV = p̂ − ½ when p̂ > ½, so SE(TV) = SE(p̂).
  const double se = tv_standard_error(emp, ref, 10000);
  CHECK(se == doctest::Approx(std::sqrt(0.7 * 0.3 / 10000)).epsilon(1e-9));
  CHECK(tv_standard_error(emp, ref, 40000) == doctest::Approx(se / 2).epsilon(1e-9));
}

}  // TEST_SUITE
