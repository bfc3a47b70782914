#pragma once

// Small synthetic studies shared by the unit tests.

#include <Eigen/Dense>
#include <cstdint>

#include "cmm/design.hpp"
#include "cmm/likelihood.hpp"
#include "cmm/sim.hpp"

namespace cmm::testing {

struct Toy {
  Dataset data;
  DesignMatrix design;
  FitData fit;
  ModelParams truth;
};

/// Settings-only study with the given segment structure.
inline Toy toy_study(int n_children, const Eigen::VectorXd& alpha, const Eigen::VectorXd& pi, std::uint64_t seed,
                     const CovariateSchema& schema = settings_schema()) {
  Toy t;
  SimConfig cfg;
  cfg.n_children = n_children;
  cfg.seed = seed;
  cfg.schema = schema;
  cfg.truth = reference_truth_with_segments(alpha, pi, kSimDelta, kSimPhi, schema);
  t.truth = cfg.truth;
  t.data = generate_dataset(cfg);
  t.design = build_design(t.data, schema);
  t.fit = make_fit_data(t.data, t.design);
  return t;
}

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

}  // namespace cmm::testing
