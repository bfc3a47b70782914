#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cmm/cct.hpp"
#include "cmm/dist.hpp"
#include "cmm/error.hpp"

using namespace cmm;

namespace {

// Log-space ratio recurrence, independent of the lgamma path.
std::vector<double> recurrence_pmf(double mu, double delta, int zmax) {
  std::vector<double> out(zmax + 1);
  double lf = delta * std::log(delta / (delta + mu));
  const double lr = std::log(mu / (mu + delta));
  out[0] = std::exp(lf);
  for (int z = 0; z < zmax; ++z) {
    lf += std::log((delta + z) / (z + 1.0)) + lr;
    out[z + 1] = std::exp(lf);
  }
  return out;
}

InflatedNB random_dist(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> umu(0.1, 60.0), udelta(0.05, 50.0);
  std::exponential_distribution<double> ex(1.0);
  InflatedNB d{{umu(rng), udelta(rng)}, {}};
  double tot = 0.0;
  for (double& p : d.weights.phi) tot += (p = ex(rng));
  for (double& p : d.weights.phi) p /= tot;
  return d;
}

}  // namespace

TEST_CASE("nb_pmf closed forms") {
  CHECK(nb_pmf(0, {3.0, 1.0}) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(nb_pmf(2, {3.0, 1.0}) == doctest::Approx(0.140625).epsilon(1e-15));
  const auto ref = recurrence_pmf(7.2, 2.5, 10);
  CHECK(std::abs(nb_pmf(5, {7.2, 2.5}) - ref[5]) < 1e-12);
}

TEST_CASE("nb_pmf matches the recurrence oracle up to 200") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> umu(0.1, 60.0), udelta(0.05, 50.0);
  for (int rep = 0; rep < 200; ++rep) {
    const double mu = umu(rng), delta = udelta(rng);
    const auto ref = recurrence_pmf(mu, delta, 200);
    for (int z = 0; z <= 200; ++z) {
      const double v = nb_pmf(z, {mu, delta});
      REQUIRE(std::abs(v - ref[z]) <= 1e-12);
      // The oracle itself accumulates rounding over 200 steps.
      REQUIRE(std::abs(v - ref[z]) <= 1e-10 * ref[z]);
    }
  }
}

TEST_CASE("nb_pmf stays finite far in the tail") {
  const double v = nb_pmf(200, {5.0, 0.2});
  CHECK(std::isfinite(v));
  CHECK(v > 0.0);
  CHECK(std::isfinite(nb_log_pmf(200, {5.0, 0.2})));
}

TEST_CASE("nb_pmf approaches Poisson for huge delta") {
  const double mu = 6.3;
  for (int z = 0; z <= 50; ++z) {
    const double pois = std::exp(-mu + z * std::log(mu) - std::lgamma(z + 1.0));
    CHECK(std::abs(nb_pmf(z, {mu, 1e8}) - pois) < 1e-6);
  }
}

TEST_CASE("nb parameter validation") {
  CHECK_THROWS_AS(nb_pmf(1, {0.0, 1.0}), Error);
  CHECK_THROWS_AS(nb_pmf(1, {1.0, -2.0}), Error);
  try {
    nb_cdf(3, {-1.0, 1.0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_parameter);
  }
}

TEST_CASE("nb_cdf") {
  CHECK(nb_cdf(-1, {3.0, 1.0}) == 0.0);
  CHECK(nb_cdf(0, {3.0, 1.0}) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::abs(nb_cdf(10, {3.0, 1.0}) - (1.0 - std::pow(0.75, 11))) < 1e-14);
  double prev = 0.0;
  for (int k = 0; k < 300; ++k) {
    const double c = nb_cdf(k, {12.0, 0.7});
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(prev == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(nb_cdf(-2, {3.0, 1.0}), Error);
}

TEST_CASE("nb_upper_tail complements the cdf") {
  for (double mu : {0.5, 4.0, 30.0}) {
    for (double delta : {0.1, 2.0, 40.0}) {
      for (int k : {0, 1, 10, 32, 101}) {
        const NegBinParams p{mu, delta};
        CHECK(std::abs(nb_upper_tail(k, p) + nb_cdf(k - 1, p) - 1.0) < 1e-12);
      }
    }
  }
  // Small tails keep relative precision.
  const NegBinParams p{3.0, 20.0};
  double direct = 0.0;
  for (int z = 60; z < 400; ++z) direct += nb_pmf(z, p);
  CHECK(nb_upper_tail(60, p) == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("softplus") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(std::abs(softplus(30.0) - 30.0) < 1e-12);
  CHECK(softplus(-30.0) == doctest::Approx(std::exp(-30.0)).epsilon(1e-6));
  CHECK(softplus(-600.0) > 0.0);
  CHECK(std::isfinite(softplus(1e4)));
  CHECK(softplus(1e4) == 1e4);
  CHECK(softplus(-1e4) >= 0.0);
  for (double eta = 1.5; eta < 40.0; eta += 0.5) {
    CHECK(std::abs(softplus(eta) - eta) <= std::exp(-eta) + 2.0 * std::numeric_limits<double>::epsilon() * eta);
  }
  for (double eta : {-5.0, -0.3, 0.0, 2.0, 9.0}) {
    const double h = 1e-6;
    const double fd = (softplus(eta + h) - softplus(eta - h)) / (2 * h);
    CHECK(softplus_deriv(eta) == doctest::Approx(fd).epsilon(1e-8));
    CHECK(softplus_deriv(eta) > 0.0);
    CHECK(softplus_deriv(eta) < 1.0);
    CHECK(softplus_inverse(softplus(eta)) == doctest::Approx(eta).epsilon(1e-10));
  }
  CHECK_THROWS_AS(softplus_inverse(0.0), Error);
}

TEST_CASE("inflated_pmf special weights") {
  const InflatedNB zero{{4.0, 2.0}, {{0.0, 1.0, 0.0, 0.0}}};
  CHECK(inflated_pmf(0, zero) == 1.0);
  for (int l = 1; l <= kCards; ++l) CHECK(inflated_pmf(l, zero) == 0.0);

  const InflatedNB attract{{4.0, 2.0}, {{0.0, 0.0, 1.0, 0.0}}};
  CHECK(inflated_pmf(8, attract) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(inflated_pmf(9, attract) == 0.0);

  const InflatedNB base{{3.0, 1.0}, {{1.0, 0.0, 0.0, 0.0}}};
  CHECK(inflated_pmf(2, base) == doctest::Approx(0.140625).epsilon(1e-15));
  CHECK(inflated_pmf(32, base) == doctest::Approx(nb_upper_tail(32, {3.0, 1.0})).epsilon(1e-12));

  const InflatedNB last{{4.0, 2.0}, {{0.0, 0.0, 0.0, 1.0}}};
  CHECK(inflated_pmf(31, last) == 1.0);

  CHECK_THROWS_AS(inflated_pmf(33, base), Error);
  CHECK_THROWS_AS(inflated_pmf(-1, base), Error);
}

TEST_CASE("inflated_pmf composition") {
  const InflatedNB d{{9.0, 2.0}, {{0.7, 0.1, 0.15, 0.05}}};
  const NegBinParams& b = d.base;
  for (int l = 0; l <= kCards; ++l) {
    double expect = 0.7 * (l == kCards ? nb_upper_tail(32, b) : nb_pmf(l, b));
    if (l == 0) expect += 0.1;
    if (in_attract_set(l)) expect += 0.15 / 7.0;
    if (l == 31) expect += 0.05;
    CHECK(std::abs(inflated_pmf(l, d) - expect) < 1e-15);
  }
}

TEST_CASE("inflated_cdf") {
  const InflatedNB d{{9.0, 2.0}, {{0.7, 0.1, 0.15, 0.05}}};
  double direct = 0.0;
  for (int l = 0; l <= 10; ++l) direct += inflated_pmf(l, d);
  CHECK(std::abs(inflated_cdf(10, d) - direct) < 1e-12);
  CHECK(inflated_cdf(-1, d) == 0.0);
  CHECK(std::abs(inflated_cdf(32, d) - 1.0) < 1e-12);
  CHECK_THROWS_AS(inflated_cdf(33, d), Error);
}

TEST_CASE("normalization over random draws") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 1000; ++rep) {
    const InflatedNB d = random_dist(rng);
    const OutcomeTable t = inflated_table(d);
    double sum = 0.0;
    for (int l = 0; l <= kCards; ++l) {
      REQUIRE(t[l] >= 0.0);
      REQUIRE(t[l] == doctest::Approx(inflated_pmf(l, d)).epsilon(1e-12));
      sum += t[l];
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("base table with derivatives") {
  for (double mu : {0.3, 5.0, 44.0}) {
    for (double delta : {0.08, 1.5, 30.0}) {
      BaseTableWithGrad g;
      base_table_with_grad(mu, delta, inverse_delta_offsets(delta), g);
      OutcomeTable v{};
      base_table_values(mu, delta, v);
      const OutcomeTable ref = base_table({mu, delta});
      for (int l = 0; l <= kCards; ++l) {
        CHECK(g.f[l] == doctest::Approx(ref[l]).epsilon(1e-11));
        CHECK(v[l] == g.f[l]);
      }
      const double hm = 1e-6 * mu, hd = 1e-6 * delta;
      const OutcomeTable mp = base_table({mu + hm, delta}), mm = base_table({mu - hm, delta});
      const OutcomeTable dp = base_table({mu, delta + hd}), dm = base_table({mu, delta - hd});
      for (int l = 0; l <= kCards; ++l) {
        const double fdm = (mp[l] - mm[l]) / (2 * hm), fdd = (dp[l] - dm[l]) / (2 * hd);
        CHECK(std::abs(g.dmu[l] - fdm) <= 1e-6 * std::abs(fdm) + 1e-8);
        CHECK(std::abs(g.ddelta[l] - fdd) <= 1e-6 * std::abs(fdd) + 1e-8);
      }
    }
  }
}

TEST_CASE("sample_negbin mean and variance") {
  Rng rng(5);
  const NegBinParams p{7.5, 3.0};
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) {
    x[i] = sample_negbin(p, rng);
    s += x[i];
  }
  const double mean = s / n;
  for (double v : x) s2 += (v - mean) * (v - mean);
  const double var = s2 / (n - 1);
  const double true_var = p.mu + p.mu * p.mu / p.delta;
  CHECK(std::abs(mean - p.mu) < 4.0 * std::sqrt(true_var / n));
  // Standard error of the sample variance from the empirical fourth moment.
  double m4 = 0.0;
  for (double v : x) m4 += std::pow(v - mean, 4);
  m4 /= n;
  CHECK(std::abs(var - true_var) < 4.0 * std::sqrt((m4 - var * var) / n));
}
