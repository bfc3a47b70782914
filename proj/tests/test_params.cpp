#include <doctest.h>

#include <cmath>
#include <random>

#include "cmm/error.hpp"
#include "cmm/params.hpp"
#include "support.hpp"

using namespace cmm;
using cmm::testing::vec;

namespace {

ParamLayout layout_with(int segments) {
  CovariateSchema s;
  s.numeric = {"iq"};
  s.categorical = {{"sex", {"boy", "girl"}}, {"income", {"low", "mid", "high"}}, {"gain_amount", {"10", "30"}}};
  s.interactions = {{"gain_amount", "sex"}};
  return ParamLayout{segments, make_block_map(s)};
}

Eigen::VectorXd random_free(const ParamLayout& layout, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(layout.n_free());
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = nd(rng);
  return v;
}

}  // namespace

TEST_CASE("layout dimensions") {
  const ParamLayout l = layout_with(3);
  CHECK(l.n_free() == 3 + l.blocks.n_free + 1 + 3 + 2);
  CHECK(l.n_theta() == 3 + l.blocks.n_columns + 1 + 4 + 3);
  CHECK(layout_with(4).n_free() - l.n_free() == 2);
  const auto names = l.theta_names();
  CHECK(names.size() == static_cast<std::size_t>(l.n_theta()));
}

TEST_CASE("softmax with pivot") {
  const Eigen::VectorXd z = softmax_with_pivot(Eigen::Vector3d::Zero());
  for (int k = 0; k < 4; ++k) CHECK(z(k) == doctest::Approx(0.25).epsilon(1e-15));
  const double e2 = std::exp(2.0), em1 = std::exp(-1.0), den = 1.0 + e2 + em1 + 1.0;
  const Eigen::VectorXd w = softmax_with_pivot(Eigen::Vector3d(2.0, -1.0, 0.0));
  CHECK(std::abs(w(0) - e2 / den) < 1e-14);
  CHECK(std::abs(w(1) - em1 / den) < 1e-14);
  CHECK(std::abs(w(2) - 1.0 / den) < 1e-14);
  CHECK(std::abs(w(3) - 1.0 / den) < 1e-14);
  // Large logits do not overflow.
  const Eigen::VectorXd big = softmax_with_pivot(Eigen::Vector2d(800.0, 790.0));
  CHECK(big.allFinite());
  CHECK(big.sum() == doctest::Approx(1.0));
  CHECK(softmax_with_pivot(Eigen::VectorXd()).size() == 1);
  const Eigen::VectorXd logits = softmax_pivot_logits(w);
  CHECK(std::abs(logits(0) - 2.0) < 1e-14);
  CHECK(std::abs(logits(1) + 1.0) < 1e-14);
}

TEST_CASE("softmax Jacobian columns sum to zero") {
  const Eigen::MatrixXd j = softmax_with_pivot_jacobian(Eigen::Vector3d(0.3, -1.2, 2.0));
  for (int c = 0; c < 3; ++c) CHECK(std::abs(j.col(c).sum()) < 1e-15);
}

TEST_CASE("expand yields valid parameters") {
  const ParamLayout l = layout_with(4);
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const ModelParams p = expand(FreeParams::from_flat(random_free(l, rng, 2.0), l), l);
    p.validate(l.blocks);
    CHECK(p.pi.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p.delta > 0.0);
  }
  FreeParams f = FreeParams::from_flat(Eigen::VectorXd::Zero(l.n_free()), l);
  const ModelParams p = expand(f, l);
  for (int s = 0; s < 4; ++s) CHECK(p.pi(s) == doctest::Approx(0.25));
  for (double v : p.phi.phi) CHECK(v == doctest::Approx(0.25));
  CHECK(p.delta == 1.0);
}

TEST_CASE("expand and collapse round trip") {
  std::mt19937_64 rng(4);
  for (int s : {1, 2, 5}) {
    const ParamLayout l = layout_with(s);
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::VectorXd v = random_free(l, rng);
      const Eigen::VectorXd back = collapse(expand(FreeParams::from_flat(v, l), l), l).flat();
      CHECK((back - v).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("Jacobian against finite differences") {
  const ParamLayout l = layout_with(3);
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd v = random_free(l, rng);
    const Eigen::MatrixXd j = jacobian_of_expand(FreeParams::from_flat(v, l), l);
    for (Eigen::Index c = 0; c < v.size(); ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(v(c)));
      Eigen::VectorXd vp = v, vm = v;
      vp(c) += h;
      vm(c) -= h;
      const Eigen::VectorXd fd =
          (expand(FreeParams::from_flat(vp, l), l).flat() - expand(FreeParams::from_flat(vm, l), l).flat()) / (2 * h);
      for (Eigen::Index r = 0; r < fd.size(); ++r) {
        CHECK(std::abs(j(r, c) - fd(r)) <= 1e-6 * std::max(1.0, std::abs(fd(r))));
      }
    }
  }
}

TEST_CASE("Delta method trivial cases") {
  CovariateSchema none;
  const ParamLayout l{1, make_block_map(none)};
  FreeParams f = FreeParams::from_flat(Eigen::VectorXd::Zero(l.n_free()), l);
  const DeltaResult zero = delta_method_cov(f, Eigen::MatrixXd::Zero(l.n_free(), l.n_free()), l);
  CHECK(zero.se.isZero());
  // Linear part is the identity for alpha; delta scales by exp(log_delta) = 1.
  Eigen::MatrixXd su = Eigen::MatrixXd::Identity(l.n_free(), l.n_free()) * 0.04;
  const DeltaResult d = delta_method_cov(f, su, l);
  CHECK(d.se(l.theta_alpha()) == doctest::Approx(0.2));
  CHECK(d.se(l.theta_delta()) == doctest::Approx(0.2));
  CHECK_FALSE(d.input_was_symmetrized);
  su(0, 1) = 0.01;
  CHECK(delta_method_cov(f, su, l).input_was_symmetrized);
  CHECK_THROWS_AS(delta_method_cov(f, Eigen::MatrixXd::Zero(2, 2), l), Error);
}

TEST_CASE("Delta method against a Monte Carlo push-forward") {
  const ParamLayout l = layout_with(2);
  std::mt19937_64 rng(6);
  const Eigen::VectorXd mean = random_free(l, rng, 0.5);
  const int d = l.n_free();
  Eigen::MatrixXd root(d, d);
  std::normal_distribution<double> nd;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) root(r, c) = nd(rng);
  const Eigen::MatrixXd sigma = 1e-3 * root * root.transpose() / d;
  const DeltaResult delta = delta_method_cov(FreeParams::from_flat(mean, l), sigma, l);

  const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  const Eigen::MatrixXd lower = llt.matrixL();
  const int n = 200000;
  const int nt = l.n_theta();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(nt);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(nt, nt);
  Eigen::VectorXd e(d);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) e(k) = nd(rng);
    const Eigen::VectorXd th = expand(FreeParams::from_flat(mean + lower * e, l), l).flat();
    sum += th;
    outer.selfadjointView<Eigen::Lower>().rankUpdate(th);
  }
  const Eigen::VectorXd mu = sum / n;
  const Eigen::MatrixXd full = outer.selfadjointView<Eigen::Lower>();
  const Eigen::MatrixXd cov = (full - n * mu * mu.transpose()) / (n - 1);
  for (int k = 0; k < nt; ++k) {
    if (delta.se(k) == 0.0) continue;
    // Sampling error of an sd estimate at 2e5 draws is about 0.16%.
    CHECK(std::sqrt(cov(k, k)) == doctest::Approx(delta.se(k)).epsilon(0.02));
  }
}

TEST_CASE("sorting by alpha keeps pairs together") {
  ModelParams p;
  p.alpha = vec({3.0, 1.0, 2.0});
  p.pi = vec({0.5, 0.2, 0.3});
  const auto order = sort_segments_by_alpha(p);
  CHECK(order == std::vector<int>{1, 2, 0});
  CHECK(p.alpha == vec({1.0, 2.0, 3.0}));
  CHECK(p.pi == vec({0.2, 0.3, 0.5}));
}

TEST_CASE("ModelParams validation") {
  const ParamLayout l = layout_with(2);
  ModelParams p = expand(FreeParams::from_flat(Eigen::VectorXd::Zero(l.n_free()), l), l);
  p.validate(l.blocks);
  ModelParams bad = p;
  bad.pi(0) = 0.9;
  CHECK_THROWS_AS(bad.validate(l.blocks), Error);
  bad = p;
  bad.beta(1) = 0.3;
  CHECK_THROWS_AS(bad.validate(l.blocks), Error);
  bad = p;
  bad.delta = 0.0;
  CHECK_THROWS_AS(bad.validate(l.blocks), Error);
}
