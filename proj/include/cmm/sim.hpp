#pragma once

// Synthetic CCT studies drawn from a known model.

#include <cstdint>
#include <string>
#include <vector>

#include "cmm/data.hpp"
#include "cmm/design.hpp"
#include "cmm/params.hpp"

namespace cmm {

struct NumericMoments {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
  int decimals = 2;  // values are rounded before they are stored
};

struct CategoricalFrequencies {
  std::string name;
  std::vector<double> weights;  // aligned with the schema levels, normalized on use
};

/// Independent marginals for the child-level covariates.
struct CovariateGenerator {
  std::vector<NumericMoments> numeric;
  std::vector<CategoricalFrequencies> categorical;
};

/// Marginals of the reference cohort for the cct_schema child covariates.
CovariateGenerator default_generator();

struct SimConfig {
  int n_children = 3404;
  int n_blocks = 2;  // each block plays the eight settings once, in random order
  std::uint64_t seed = 1;
  CovariateSchema schema = cct_schema();
  ModelParams truth;
  CovariateGenerator covariates = default_generator();

  void validate() const;
};

/// Default dispersion and inflation weights for simulated studies.
inline constexpr double kSimDelta = 20.0;
inline constexpr std::array<double, 4> kSimPhi{0.89, 0.02, 0.05, 0.04};

/// Four-segment ground truth with the reference intercepts, segment sizes and
/// regression weights on cct_schema.
ModelParams reference_truth(double delta = kSimDelta, const std::array<double, 4>& phi = kSimPhi);

/// Same weights with a different segment structure, restricted to the
/// columns of `schema` (every column must carry a reference weight).
ModelParams reference_truth_with_segments(const Eigen::VectorXd& alpha, const Eigen::VectorXd& pi,
                                      double delta = kSimDelta, const std::array<double, 4>& phi = kSimPhi,
                                      const CovariateSchema& schema = cct_schema());

/// The game-setting and previous-loss blocks of cct_schema, without child covariates.
CovariateSchema settings_schema();

/// Children first (segment, covariates), then trials child by child. Child i
/// draws from streams derived from (seed, 2i) and (seed, 2i + 1), so the
/// output is a pure function of the configuration.
Dataset generate_dataset(const SimConfig& cfg);

/// Fraction of censored trials.
double censoring_prevalence(const Dataset& data);

}  // namespace cmm
