#pragma once

// Constrained model parameters, their unconstrained image, and the map
// between the two (with its Jacobian for Delta-method inference).

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "cmm/design.hpp"
#include "cmm/dist.hpp"

namespace cmm {

/// Dimensions shared by ModelParams and FreeParams.
struct ParamLayout {
  int segments = 1;
  BlockMap blocks;

  int n_free() const { return segments + blocks.n_free + 1 + 3 + (segments - 1); }
  /// Length of the flat constrained vector (alpha, beta, delta, phi, pi).
  int n_theta() const { return segments + blocks.n_columns + 1 + 4 + segments; }

  int theta_alpha() const { return 0; }
  int theta_beta() const { return segments; }
  int theta_delta() const { return segments + blocks.n_columns; }
  int theta_phi() const { return theta_delta() + 1; }
  int theta_pi() const { return theta_phi() + 4; }

  std::vector<std::string> theta_names() const;
};

struct ModelParams {
  Eigen::VectorXd alpha;  // per segment, linear-predictor units
  Eigen::VectorXd beta;   // per design column, sum zero within each block
  double delta = 1.0;
  InflationWeights phi;
  Eigen::VectorXd pi;

  int segments() const { return static_cast<int>(alpha.size()); }
  Eigen::VectorXd flat() const;
  void validate(const BlockMap& bm) const;
};

struct FreeParams {
  Eigen::VectorXd gamma_u;  // alpha_u (S) then beta_u with reference entries omitted
  double log_delta = 0.0;
  std::array<double, 3> tau{0.0, 0.0, 0.0};
  Eigen::VectorXd sigma;    // S - 1 logits, last segment is the pivot

  Eigen::VectorXd flat() const;
  static FreeParams from_flat(const Eigen::VectorXd& v, const ParamLayout& layout);
};

/// Softmax over (logits, 0): the last component is the implicit remainder.
Eigen::VectorXd softmax_with_pivot(const Eigen::VectorXd& logits);
/// Jacobian d softmax / d logits, (K+1) x K.
Eigen::MatrixXd softmax_with_pivot_jacobian(const Eigen::VectorXd& logits);
/// Inverse of softmax_with_pivot: log(w_k / w_last).
Eigen::VectorXd softmax_pivot_logits(const Eigen::VectorXd& weights);

ModelParams expand(const FreeParams& free, const ParamLayout& layout);
FreeParams collapse(const ModelParams& params, const ParamLayout& layout);

/// d theta / d theta_u, n_theta x n_free; block diagonal.
Eigen::MatrixXd jacobian_of_expand(const FreeParams& free, const ParamLayout& layout);

struct DeltaResult {
  Eigen::MatrixXd cov;  // covariance of the flat constrained vector
  Eigen::VectorXd se;
  bool input_was_symmetrized = false;
};

/// Sigma_theta = J Sigma_u J' with J = jacobian_of_expand.
DeltaResult delta_method_cov(const FreeParams& free, const Eigen::MatrixXd& sigma_u,
                             const ParamLayout& layout);

/// Reorders segments so that alpha is ascending; returns the permutation used.
std::vector<int> sort_segments_by_alpha(ModelParams& params);

}  // namespace cmm
