#include "cmm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cmm/error.hpp"
#include "cmm/format.hpp"

namespace cmm {

namespace {

int draw_index(const std::vector<double>& weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::uniform_real_distribution<double> u(0.0, total);
  const double target = u(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (target < acc) return static_cast<int>(k);
  }
  for (std::size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

std::string child_id(int i, int n) {
  std::string digits = std::to_string(i + 1);
  const std::size_t width = std::max<std::size_t>(4, std::to_string(n).size());
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "C" + digits;
}

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

}  // namespace

CovariateGenerator default_generator() {
  CovariateGenerator g;
  g.numeric = {{"age", 9.8, 0.26, 2}, {"iq", 102.0, 14.7, 0}};
  g.categorical = {
      {"sex", {0.5, 0.5}},
      // dutch, asian, african, moroccan, dutch_antilles, surinamese, turkish, other_western
      {"ethnicity", {59.8, 5.7, 4.5, 4.9, 2.1, 7.1, 5.8, 10.1}},
      {"education", {6.7, 42.2, 51.2}},
      {"income", {20.5, 43.8, 35.7}},
  };
  return g;
}

void SimConfig::validate() const {
  if (n_children < 2) fail(ErrorKind::config, "simulation needs at least two children");
  if (n_blocks < 1) fail(ErrorKind::config, "simulation needs at least one block of trials");
  schema.validate();
  const BlockMap bm = make_block_map(schema);
  truth.validate(bm);
  for (const auto& name : schema.numeric) {
    const auto it = std::find_if(covariates.numeric.begin(), covariates.numeric.end(),
                                 [&](const NumericMoments& m) { return m.name == name; });
    if (it == covariates.numeric.end()) fail(ErrorKind::config, "no generator for numeric covariate '" + name + "'");
    if (!(it->sd > 0.0)) fail(ErrorKind::config, "generator sd for '" + name + "' must be positive");
  }
  for (const auto& c : schema.categorical) {
    if (is_trial_column(c.name)) continue;
    const auto it = std::find_if(covariates.categorical.begin(), covariates.categorical.end(),
                                 [&](const CategoricalFrequencies& f) { return f.name == c.name; });
    if (it == covariates.categorical.end()) {
      fail(ErrorKind::config, "no generator for categorical covariate '" + c.name + "'");
    }
    if (it->weights.size() != c.levels.size()) {
      fail(ErrorKind::config, "generator for '" + c.name + "' has the wrong number of levels");
    }
    double total = 0.0;
    for (double w : it->weights) {
      if (!(w >= 0.0)) fail(ErrorKind::config, "generator weights for '" + c.name + "' must be nonnegative");
      total += w;
    }
    if (!(total > 0.0)) fail(ErrorKind::config, "generator weights for '" + c.name + "' sum to zero");
  }
}

CovariateSchema settings_schema() {
  const CovariateSchema full = cct_schema();
  CovariateSchema s;
  for (const auto& c : full.categorical) {
    if (is_trial_column(c.name)) s.categorical.push_back(c);
  }
  return s;
}

ModelParams reference_truth_with_segments(const Eigen::VectorXd& alpha, const Eigen::VectorXd& pi, double delta,
                                      const std::array<double, 4>& phi, const CovariateSchema& schema) {
  const BlockMap bm = make_block_map(schema);
  const std::map<std::string, double> weights{
      {"age", -0.012},
      {"iq", -0.539},
      {"sex=boy", -0.286},
      {"sex=girl", 0.286},
      {"ethnicity=dutch", -1.170},
      {"ethnicity=asian", -0.875},
      {"ethnicity=african", 0.570},
      {"ethnicity=moroccan", 0.477},
      {"ethnicity=dutch_antilles", -0.139},
      {"ethnicity=surinamese", 0.288},
      {"ethnicity=turkish", 0.527},
      {"ethnicity=other_western", 0.322},
      {"education=low", 0.571},
      {"education=middle", -0.231},
      {"education=high", -0.340},
      {"income=lt2000", -0.134},
      {"income=2000_4000", -0.231},
      {"income=gt4000", 0.365},
      {"gain_amount=10", 0.343},
      {"gain_amount=30", -0.343},
      {"loss_amount=250", 0.195},
      {"loss_amount=750", -0.195},
      {"n_loss_cards=1", 0.850},
      {"n_loss_cards=3", -0.850},
      {"prev_loss=0", 0.823},
      {"prev_loss=1", -0.823},
      {"prev2_loss=0", 0.502},
      {"prev2_loss=1", -0.502},
      {"gain_amount=10:sex=boy", -0.170},
      {"gain_amount=10:sex=girl", 0.170},
      {"gain_amount=30:sex=boy", 0.170},
      {"gain_amount=30:sex=girl", -0.170},
      {"loss_amount=250:sex=boy", 0.154},
      {"loss_amount=250:sex=girl", -0.154},
      {"loss_amount=750:sex=boy", -0.154},
      {"loss_amount=750:sex=girl", 0.154},
      {"n_loss_cards=1:sex=boy", 0.169},
      {"n_loss_cards=1:sex=girl", -0.169},
      {"n_loss_cards=3:sex=boy", -0.169},
      {"n_loss_cards=3:sex=girl", 0.169},
  };
  ModelParams p;
  p.alpha = alpha;
  p.pi = pi;
  p.delta = delta;
  p.phi.phi = phi;
  p.beta.resize(bm.n_columns);
  for (int c = 0; c < bm.n_columns; ++c) {
    const auto it = weights.find(bm.column_names[c]);
    if (it == weights.end()) fail(ErrorKind::config, "no reference weight for column " + bm.column_names[c]);
    p.beta(c) = it->second;
  }
  p.validate(bm);
  return p;
}

ModelParams reference_truth(double delta, const std::array<double, 4>& phi) {
  Eigen::VectorXd alpha(4), pi(4);
  alpha << 5.85, 11.04, 18.68, 37.52;
  pi << 0.097, 0.275, 0.357, 0.271;
  return reference_truth_with_segments(alpha, pi, delta, phi);
}

Dataset generate_dataset(const SimConfig& cfg) {
  cfg.validate();
  const BlockMap bm = make_block_map(cfg.schema);
  Dataset data;

  // Child-level columns: numerics in schema order, then child categoricals.
  std::vector<const NumericMoments*> numeric;
  for (const auto& name : cfg.schema.numeric) {
    data.covariate_names.push_back(name);
    numeric.push_back(&*std::find_if(cfg.covariates.numeric.begin(), cfg.covariates.numeric.end(),
                                     [&](const NumericMoments& m) { return m.name == name; }));
  }
  std::vector<const CategoricalSpec*> child_cats;
  std::vector<const CategoricalFrequencies*> child_freq;
  for (const auto& c : cfg.schema.categorical) {
    if (is_trial_column(c.name)) continue;
    data.covariate_names.push_back(c.name);
    child_cats.push_back(&c);
    child_freq.push_back(&*std::find_if(cfg.covariates.categorical.begin(), cfg.covariates.categorical.end(),
                                        [&](const CategoricalFrequencies& f) { return f.name == c.name; }));
  }

  const std::vector<double> pi(cfg.truth.pi.data(), cfg.truth.pi.data() + cfg.truth.pi.size());
  for (int i = 0; i < cfg.n_children; ++i) {
    Rng rng = derive_stream(cfg.seed, 2 * static_cast<std::uint64_t>(i));
    ChildRecord child;
    child.child_id = child_id(i, cfg.n_children);
    child.segment_true = draw_index(pi, rng) + 1;
    for (const NumericMoments* m : numeric) {
      std::normal_distribution<double> nd(m->mean, m->sd);
      child.values.push_back(format_number(round_to(nd(rng), m->decimals)));
    }
    for (std::size_t k = 0; k < child_cats.size(); ++k) {
      child.values.push_back(child_cats[k]->levels[draw_index(child_freq[k]->weights, rng)]);
    }
    data.children.push_back(std::move(child));
  }

  const Standardization stats = compute_standardization(data, cfg.schema);
  const auto& settings = all_settings();
  std::vector<double> row(bm.n_columns);
  const Eigen::Map<const Eigen::VectorXd> row_vec(row.data(), bm.n_columns);
  for (int i = 0; i < cfg.n_children; ++i) {
    Rng rng = derive_stream(cfg.seed, 2 * static_cast<std::uint64_t>(i) + 1);
    const ChildRecord& child = data.children[i];
    const double alpha = cfg.truth.alpha(child.segment_true - 1);
    bool prev = false, prev2 = false;
    int trial_index = 0;
    for (int b = 0; b < cfg.n_blocks; ++b) {
      std::array<int, 8> order{0, 1, 2, 3, 4, 5, 6, 7};
      for (int k = 7; k > 0; --k) {
        std::uniform_int_distribution<int> pick(0, k);
        std::swap(order[k], order[pick(rng)]);
      }
      for (int k : order) {
        TrialRecord t;
        t.child_id = child.child_id;
        t.trial_index = ++trial_index;
        t.setting = settings[k];
        t.prev_loss = prev;
        t.prev2_loss = prev2;
        fill_design_row(data, child, t, cfg.schema, bm, stats, row);
        const double mu = std::max(softplus(alpha + row_vec.dot(cfg.truth.beta)), 1e-300);
        const OutcomeTable table = inflated_table(InflatedNB{{mu, cfg.truth.delta}, cfg.truth.phi});
        const int z = sample_outcome(table, rng);
        const TrialOutcome o = simulate_trial(z, t.setting, rng);
        t.y = o.y;
        t.censored = o.censored;
        t.score = o.score;
        t.z_true = o.z_true;
        prev2 = prev;
        prev = o.censored;
        data.trials.push_back(t);
      }
    }
  }
  return data;
}

double censoring_prevalence(const Dataset& data) {
  if (data.trials.empty()) return 0.0;
  std::size_t c = 0;
  for (const auto& t : data.trials) c += t.censored ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(data.trials.size());
}

}  // namespace cmm
