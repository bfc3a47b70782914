#pragma once

// Maximum-likelihood fitting: start values, warm start on a subsample, BFGS,
// one Newton-Raphson polish step and Delta-method standard errors.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cmm/likelihood.hpp"
#include "cmm/optimize.hpp"
#include "cmm/params.hpp"

namespace cmm {

struct FitConfig {
  int segments = 1;
  double reltol = 1e-10;
  int max_iters = 1000;
  int warm_start_n = 100;  // 0 disables the warm start
  std::uint64_t seed = 1;
  int threads = 1;
  double grad_tol = 1e-4;        // max |gradient| required after the polish
  double hessian_rel_step = 1e-4;
  double hessian_abs_step = 1e-4;
  double phi_floor = 0.01;       // epsilon of the inflation start rule
  bool compute_se = true;

  void validate() const;
};

struct FitResult {
  ParamLayout layout;
  ModelParams params;  // segments sorted by ascending alpha
  FreeParams free;
  Eigen::VectorXd se;          // per flat ModelParams entry; empty when the Hessian is singular
  Eigen::MatrixXd cov_theta;   // empty when the Hessian is singular
  Eigen::MatrixXd hessian;     // of the negative log-likelihood in free coordinates
  double loglik = 0.0;         // Omega constant omitted
  double bic = 0.0;
  int n_params = 0;
  std::size_t n_children = 0;
  std::size_t n_rows = 0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  std::string optimizer_stop;
  double gradient_norm = 0.0;  // max |gradient| at the reported point
  double hessian_condition = 0.0;
  bool hessian_singular = false;
  bool polish_accepted = false;
  bool warm_started = false;
  bool se_input_symmetrized = false;
  std::vector<int> degenerate_segments;  // 0-based, pi_s < 1e-4
  std::size_t floored_terms = 0;
  FitConfig config;
};

/// Start values: alpha_s = 32 s / (S + 1), beta = 0, delta = 1, pi uniform and
/// phi from the excess mass at 0, A and 31 over neighbour interpolation.
FreeParams initialize(const FitData& data, const ParamLayout& layout, const FitConfig& cfg);

/// phi start rule applied to a histogram of uncensored outcomes.
InflationWeights initial_phi(const std::vector<int>& uncensored_y, double floor);

/// FitData restricted to the children at the given positions.
FitData subset_fit_data(const FitData& data, const std::vector<std::size_t>& positions);

/// Seeded subsample of min(n, N) children, in ascending order.
std::vector<std::size_t> warm_start_sample(std::size_t n_children, std::size_t n, std::uint64_t seed);

/// BFGS optimum on a warm_start_n subsample; falls back to initialize when
/// the subsample fit fails, and is initialize when warm_start_n >= N.
FreeParams warm_start(const FitData& data, const ParamLayout& layout, const FitConfig& cfg,
                      bool* used_subsample = nullptr);

FitResult fit(const FitData& data, const BlockMap& blocks, const FitConfig& cfg);

/// Fit from a given start vector in free coordinates.
FitResult fit_from(const FitData& data, const ParamLayout& layout, const FitConfig& cfg,
                   const Eigen::VectorXd& start);

/// Reorders segments of a free vector by ascending alpha.
Eigen::VectorXd sort_free_segments(const Eigen::VectorXd& theta_u, const ParamLayout& layout);

}  // namespace cmm
