#include <doctest.h>

#include <cmath>
#include <random>

#include "cmm/error.hpp"
#include "cmm/estimate.hpp"
#include "cmm/inference.hpp"
#include "support.hpp"

using namespace cmm;
using cmm::testing::toy_study;
using cmm::testing::vec;

namespace {

FitConfig quick(int segments) {
  FitConfig c;
  c.segments = segments;
  return c;
}

}  // namespace

TEST_CASE("start values") {
  const auto toy = toy_study(30, vec({6.0, 20.0}), vec({0.5, 0.5}), 1);
  for (int s : {1, 2, 4}) {
    const ParamLayout l{s, toy.design.blocks};
    const FreeParams f = initialize(toy.fit, l, quick(s));
    for (int k = 0; k < s; ++k) CHECK(f.gamma_u(k) == doctest::Approx(32.0 * (k + 1) / (s + 1)));
    CHECK(f.gamma_u.tail(l.blocks.n_free).isZero());
    CHECK(f.log_delta == 0.0);
    CHECK(f.sigma.isZero());
    const ModelParams p = expand(f, l);
    p.validate(l.blocks);
  }
  const FreeParams two = initialize(toy.fit, ParamLayout{2, toy.design.blocks}, quick(2));
  CHECK(two.gamma_u(0) == doctest::Approx(32.0 / 3.0));
  CHECK(two.gamma_u(1) == doctest::Approx(64.0 / 3.0));
}

TEST_CASE("inflation start rule") {
  std::vector<int> flat;
  for (int y = 0; y <= 32; ++y) flat.push_back(y);
  const InflationWeights w = initial_phi(flat, 0.01);
  CHECK(w.phi[0] == doctest::Approx(0.97));
  CHECK(w.phi[1] == doctest::Approx(0.01));
  CHECK(w.phi[2] == doctest::Approx(0.01));
  CHECK(w.phi[3] == doctest::Approx(0.01));

  // 10 extra zeros on top of a flat histogram of 33 outcomes.
  std::vector<int> spiky = flat;
  for (int k = 0; k < 10; ++k) spiky.push_back(0);
  const InflationWeights z = initial_phi(spiky, 0.01);
  CHECK(z.phi[1] == doctest::Approx(10.0 / 43.0));
  w.validate();
  z.validate();
}

TEST_CASE("warm-start subsample") {
  const auto a = warm_start_sample(500, 100, 9), b = warm_start_sample(500, 100, 9), c = warm_start_sample(500, 100, 10);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.size() == 100);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(warm_start_sample(50, 100, 9).size() == 50);

  const auto toy = toy_study(60, vec({6.0, 20.0}), vec({0.5, 0.5}), 4);
  const ParamLayout l{2, toy.design.blocks};
  FitConfig cfg = quick(2);
  cfg.warm_start_n = 100;
  bool used = true;
  const FreeParams direct = warm_start(toy.fit, l, cfg, &used);
  CHECK_FALSE(used);
  CHECK(direct.flat() == initialize(toy.fit, l, cfg).flat());
  cfg.warm_start_n = 30;
  const FreeParams w1 = warm_start(toy.fit, l, cfg, &used);
  CHECK(used);
  CHECK(w1.flat() == warm_start(toy.fit, l, cfg).flat());
}

TEST_CASE("sorting a free vector permutes segments exactly") {
  const auto toy = toy_study(10, vec({6.0, 20.0, 12.0}), vec({0.2, 0.5, 0.3}), 2);
  const ParamLayout l{3, toy.design.blocks};
  const Eigen::VectorXd v = collapse(toy.truth, l).flat();
  const ModelParams sorted = expand(FreeParams::from_flat(sort_free_segments(v, l), l), l);
  CHECK(sorted.alpha(0) == doctest::Approx(6.0));
  CHECK(sorted.alpha(1) == doctest::Approx(12.0));
  CHECK(sorted.alpha(2) == doctest::Approx(20.0));
  CHECK(sorted.pi(0) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(sorted.pi(1) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(sorted.pi(2) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(Likelihood(toy.fit, l).value(sort_free_segments(v, l)) == doctest::Approx(Likelihood(toy.fit, l).value(v)));
}

TEST_CASE("pure negative binomial recovery") {
  // Uncensored draws from one NB, the base tail lumped at 32 as in the model.
  const double mu = 6.0, delta = 5.0;
  Rng rng(77);
  FitData d;
  d.child_begin.push_back(0);
  for (int i = 0; i < 400; ++i) {
    for (int t = 0; t < 4; ++t) {
      d.y.push_back(std::min(sample_negbin({mu, delta}, rng), kCards));
      d.censored.push_back(0);
      d.setting.push_back({10, 250, 1});
    }
    d.child_begin.push_back(d.y.size());
    d.child_ids.push_back("N" + std::to_string(i));
  }
  d.x_free = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.y.size()), 0);
  d.x_full = d.x_free;
  const ParamLayout l{1, make_block_map(CovariateSchema{})};
  Eigen::VectorXd start(l.n_free());
  start << 16.0, 0.0, 12.0, 0.0, 0.0;
  FitConfig cfg = quick(1);
  const FitResult r = fit_from(d, l, cfg, start);
  // The inflation weights sit on the simplex boundary, where the likelihood is
  // flat in tau: the Hessian is singular and standard errors are withheld.
  CHECK(r.hessian_singular);
  CHECK(r.se.size() == 0);
  CHECK(r.params.phi.phi[0] > 0.9999);
  // With phi held at its boundary value, the (alpha, log delta) block gives the SE.
  const Eigen::Matrix2d h = r.hessian.topLeftCorner(2, 2);
  const double se_alpha = std::sqrt(h.inverse()(0, 0));
  const double alpha_true = softplus_inverse(mu);
  CHECK(std::abs(r.params.alpha(0) - alpha_true) <= 2.0 * se_alpha);
  CHECK(std::exp(r.free.log_delta) == doctest::Approx(delta).epsilon(0.3));
}

TEST_CASE("fit contract on a two-segment study") {
  const auto toy = toy_study(250, vec({5.0, 18.0}), vec({0.4, 0.6}), 31);
  FitConfig cfg = quick(2);
  const FitResult r = fit(toy.fit, toy.design.blocks, cfg);
  CHECK(r.converged);
  CHECK(r.gradient_norm <= 1e-4);
  CHECK(r.params.alpha(0) <= r.params.alpha(1));
  CHECK(r.bic == doctest::Approx(-2.0 * r.loglik + r.n_params * std::log(250.0)).epsilon(1e-14));
  CHECK(r.n_params == r.layout.n_free());
  CHECK(r.n_children == 250);
  CHECK(r.se.size() == r.layout.n_theta());
  CHECK_FALSE(r.hessian_singular);
  for (int k = 0; k < r.layout.segments; ++k) {
    CHECK(r.se(r.layout.theta_alpha() + k) > 0.0);
    CHECK(std::isfinite(r.se(r.layout.theta_alpha() + k)));
  }
  CHECK(r.se(r.layout.theta_delta()) > 0.0);
  CHECK(r.degenerate_segments.empty());
  CHECK(r.floored_terms == 0);

  // The optimum is at least as good as the truth on the same data.
  const double at_truth = -total_negloglik(collapse(toy.truth, r.layout).flat(), toy.fit, r.layout);
  CHECK(r.loglik >= at_truth);

  // The Hessian at the optimum is positive semidefinite.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r.hessian);
  CHECK(eig.eigenvalues().minCoeff() > -1e-6);

  // Bit-identical on rerun and across thread counts.
  const FitResult again = fit(toy.fit, toy.design.blocks, cfg);
  CHECK(again.free.flat() == r.free.flat());
  CHECK(again.loglik == r.loglik);
  cfg.threads = 4;
  const FitResult threaded = fit(toy.fit, toy.design.blocks, cfg);
  CHECK(threaded.free.flat() == r.free.flat());
  CHECK(threaded.se == r.se);
}

TEST_CASE("iteration cap gives a non-converged result") {
  const auto toy = toy_study(40, vec({5.0, 18.0}), vec({0.4, 0.6}), 3);
  FitConfig cfg = quick(2);
  cfg.max_iters = 2;
  cfg.warm_start_n = 0;
  const FitResult r = fit(toy.fit, toy.design.blocks, cfg);
  CHECK_FALSE(r.converged);
  CHECK(r.optimizer_stop == "max_iters");
  CHECK(std::isfinite(r.loglik));
}

TEST_CASE("an empty segment is flagged without failing") {
  const auto toy = toy_study(120, vec({5.0, 18.0}), vec({0.4, 0.6}), 8);
  const ParamLayout l{3, toy.design.blocks};
  FreeParams start = collapse(reference_truth_with_segments(vec({5.0, 11.0, 18.0}), vec({1e-9, 0.4, 0.6 - 1e-9}),
                                                        kSimDelta, kSimPhi, settings_schema()),
                              l);
  start.sigma(0) = -40.0;
  FitConfig cfg = quick(3);
  FitResult r;
  CHECK_NOTHROW(r = fit_from(toy.fit, l, cfg, start.flat()));
  CHECK_FALSE(r.degenerate_segments.empty());
  const SelectionReport rep = select_segments({r});
  CHECK(rep.entries.front().degenerate);
  CHECK_FALSE(rep.entries.front().passes_share);
}

TEST_CASE("recovery with well-separated segments and no covariates") {
  int good = 0;
  for (int seed = 1; seed <= 10; ++seed) {
    const auto toy = toy_study(2000, vec({8.0, 16.0}), vec({0.45, 0.55}), 500 + seed, CovariateSchema{});
    const FitResult r = fit(toy.fit, toy.design.blocks, quick(2));
    bool ok = r.converged && r.se.size() > 0;
    for (int k = 0; ok && k < 2; ++k) {
      ok = std::abs(r.params.pi(k) - toy.truth.pi(k)) <= 0.03 &&
           std::abs(r.params.alpha(k) - toy.truth.alpha(k)) <= 3.0 * r.se(k);
    }
    good += ok;
  }
  CHECK(good >= 9);
}

TEST_CASE("config validation") {
  FitConfig c;
  c.segments = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = FitConfig{};
  c.reltol = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = FitConfig{};
  c.threads = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}
