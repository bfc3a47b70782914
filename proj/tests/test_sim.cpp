#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cmm/error.hpp"
#include "cmm/sim.hpp"
#include "support.hpp"

using namespace cmm;
using cmm::testing::vec;

namespace {

SimConfig small(int n, std::uint64_t seed, const CovariateSchema& schema = cct_schema()) {
  SimConfig c;
  c.n_children = n;
  c.seed = seed;
  c.schema = schema;
  c.truth = reference_truth_with_segments(vec({5.85, 11.04, 18.68, 37.52}), vec({0.097, 0.275, 0.357, 0.271}), kSimDelta,
                                      kSimPhi, schema);
  return c;
}

}  // namespace

TEST_CASE("reference truth") {
  const ModelParams p = reference_truth();
  const BlockMap bm = make_block_map(cct_schema());
  p.validate(bm);
  CHECK(p.segments() == 4);
  CHECK(p.alpha(3) == 37.52);
  CHECK(p.beta.size() == bm.n_columns);
  CHECK(std::abs(p.pi.sum() - 1.0) < 1e-12);
  const ModelParams s = reference_truth_with_segments(vec({5.0, 20.0}), vec({0.5, 0.5}), 10.0, kSimPhi, settings_schema());
  CHECK(s.beta.size() == make_block_map(settings_schema()).n_columns);
  CHECK(s.delta == 10.0);

  CovariateSchema unknown = settings_schema();
  unknown.numeric.push_back("height");
  CHECK_THROWS_AS(reference_truth_with_segments(vec({5.0}), vec({1.0}), 10.0, kSimPhi, unknown), Error);
}

TEST_CASE("settings schema") {
  const CovariateSchema s = settings_schema();
  CHECK(s.numeric.empty());
  CHECK(s.interactions.empty());
  REQUIRE(s.categorical.size() == 5);
  for (const auto& c : s.categorical) CHECK(is_trial_column(c.name));
}

TEST_CASE("dataset shape") {
  const Dataset d = generate_dataset(small(30, 4));
  CHECK(d.children.size() == 30);
  CHECK(d.trials.size() == 30 * 16);
  CHECK(d.covariate_names.size() == 6);
  std::map<std::string, std::vector<const TrialRecord*>> by_child;
  for (const auto& t : d.trials) by_child[t.child_id].push_back(&t);
  CHECK(by_child.size() == 30);
  for (const auto& [id, trials] : by_child) {
    REQUIRE(trials.size() == 16);
    for (int b = 0; b < 2; ++b) {
      std::set<std::tuple<int, int, int>> seen;
      for (int k = 0; k < 8; ++k) {
        const TrialRecord& t = *trials[b * 8 + k];
        CHECK(t.trial_index == b * 8 + k + 1);
        seen.insert({t.setting.gain_amount, t.setting.loss_amount, t.setting.n_loss_cards});
      }
      CHECK(seen.size() == 8);
    }
    // Previous-loss indicators follow the censoring history.
    CHECK_FALSE(trials[0]->prev_loss);
    CHECK_FALSE(trials[0]->prev2_loss);
    for (std::size_t k = 1; k < trials.size(); ++k) {
      CHECK(trials[k]->prev_loss == trials[k - 1]->censored);
      if (k >= 2) CHECK(trials[k]->prev2_loss == trials[k - 2]->censored);
    }
  }
  for (const auto& t : d.trials) {
    CHECK(t.y >= 0);
    CHECK(t.y <= kCards);
    CHECK(t.z_true >= t.y);
    if (!t.censored) CHECK(t.y == t.z_true);
    if (t.censored) CHECK(t.score == (t.y - 1) * t.setting.gain_amount - t.setting.loss_amount);
  }
}

TEST_CASE("determinism") {
  const Dataset a = generate_dataset(small(25, 9)), b = generate_dataset(small(25, 9)), c = generate_dataset(small(25, 10));
  REQUIRE(a.trials.size() == b.trials.size());
  bool same = true, differs = false;
  for (std::size_t k = 0; k < a.trials.size(); ++k) {
    same = same && a.trials[k].y == b.trials[k].y && a.trials[k].censored == b.trials[k].censored &&
           a.trials[k].z_true == b.trials[k].z_true;
    differs = differs || a.trials[k].z_true != c.trials[k].z_true;
  }
  for (std::size_t i = 0; i < a.children.size(); ++i) same = same && a.children[i].values == b.children[i].values;
  CHECK(same);
  CHECK(differs);

  // Child i depends only on its own streams: a larger study extends a smaller one.
  const Dataset big = generate_dataset(small(40, 9));
  CHECK(big.children[3].segment_true == a.children[3].segment_true);
  CHECK(big.children[3].values == a.children[3].values);
}

TEST_CASE("segment shares and degenerate mixtures") {
  SimConfig c = small(200, 2, settings_schema());
  c.truth = reference_truth_with_segments(vec({5.0, 20.0}), vec({1.0, 0.0}), kSimDelta, kSimPhi, settings_schema());
  const Dataset d = generate_dataset(c);
  for (const auto& ch : d.children) CHECK(ch.segment_true == 1);
  CHECK(d.covariate_names.empty());
}

TEST_CASE("loss cards shorten rounds and censoring prevalence") {
  const Dataset d = generate_dataset(small(400, 11));
  double sum1 = 0, n1 = 0, sum3 = 0, n3 = 0;
  for (const auto& t : d.trials) {
    if (t.setting.n_loss_cards == 1) {
      sum1 += t.z_true;
      ++n1;
    } else {
      sum3 += t.z_true;
      ++n3;
    }
  }
  CHECK(sum1 / n1 > sum3 / n3);
  const double prev = censoring_prevalence(d);
  CHECK(prev > 0.55);
  CHECK(prev < 0.80);
  std::size_t censored = 0;
  for (const auto& t : d.trials) censored += t.censored;
  CHECK(prev == static_cast<double>(censored) / d.trials.size());
}

TEST_CASE("config validation") {
  SimConfig c = small(1, 1);
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.n_blocks = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.covariates.numeric.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.truth.beta.resize(3);
  CHECK_THROWS(c.validate());
}
