#pragma once

// Posterior segment probabilities, BIC-based segment selection and the
// weighted-means Wald test for external per-child scores.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cmm/estimate.hpp"

namespace cmm {

/// N x S posterior probabilities, computed in log space; rows sum to one.
Eigen::MatrixXd posteriors(const FitData& data, const ModelParams& params, EvalStats* stats = nullptr);
Eigen::MatrixXd posteriors(const FitResult& fit, const FitData& data);

/// -2 loglik + n_params log(n_units).
double bic(double loglik, int n_params, std::size_t n_units);

struct SelectionEntry {
  int segments = 0;
  double loglik = 0.0;
  double bic = 0.0;
  int n_params = 0;
  bool converged = false;
  double min_share = 0.0;
  double min_alpha_gap_se = 0.0;  // infinite for S = 1, NaN without standard errors
  bool bic_improves = false;      // against the next smaller S in the report
  bool passes_share = false;
  bool passes_gap = false;
  bool degenerate = false;        // some pi_s < 1e-4
};

struct SelectionReport {
  double min_share = 0.05;
  double min_alpha_gap_se = 2.0;
  std::vector<SelectionEntry> entries;  // ascending S
  int recommended = 0;
  /// No S passed both criteria; `recommended` is then the minimum-BIC S.
  bool override_used = false;
};

/// Largest S whose smallest segment share and adjacent alpha gaps (in joint
/// standard errors) pass the thresholds.
SelectionReport select_segments(const std::vector<FitResult>& fits, double min_share = 0.05,
                                double min_alpha_gap_se = 2.0);

struct WaldProfile {
  Eigen::VectorXd psi;       // OLS coefficients of the score on P
  Eigen::VectorXd psi_star;  // posterior-weighted segment means
  Eigen::MatrixXd cov;       // covariance of psi_star
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::vector<int> kept_segments;     // columns of P used
  std::vector<int> dropped_segments;  // columns without posterior mass
};

/// OLS of the score on P without intercept, psi* = B psi with
/// B = Diag(P'1)^-1 P'P, and a Wald test of equal psi* via adjacent differences.
/// `robust` swaps the homoskedastic coefficient covariance for HC0.
WaldProfile weighted_profile(const Eigen::MatrixXd& p, const Eigen::VectorXd& score, bool robust = false);

/// "***" below 0.01, "**" below 0.05, "*" below 0.10.
std::string significance_stars(double p_value);

}  // namespace cmm
