#pragma once

// Censored mixture log-likelihood: per-trial factors, per-child mixture
// contributions and the total objective over the unconstrained parameters.

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cmm/data.hpp"
#include "cmm/design.hpp"
#include "cmm/params.hpp"

namespace cmm {

/// Terms below this are floored before taking logs.
inline constexpr double kThetaFloor = 1e-300;

/// Point mass Pr(Z = y) when uncensored, upper tail Pr(Z >= y) when censored.
double theta(int y, bool censored, const InflatedNB& d);

/// Observations and design rows laid out for likelihood evaluation.
struct FitData {
  Eigen::MatrixXd x_free;  // reference-coded columns
  Eigen::MatrixXd x_full;  // full dummy coding
  std::vector<int> y;
  std::vector<unsigned char> censored;
  std::vector<GameSetting> setting;
  std::vector<std::size_t> child_begin;  // size N + 1
  std::vector<std::string> child_ids;

  std::size_t n_children() const { return child_begin.size() - 1; }
  std::size_t n_rows() const { return y.size(); }
};

FitData make_fit_data(const Dataset& data, const DesignMatrix& design);

/// Counters gathered during an evaluation.
struct EvalStats {
  std::size_t floored_terms = 0;
};

/// log sum_s pi_s prod_t theta_{ts} for one child; `rows` are full-coded design rows.
double person_loglik(std::span<const int> y, std::span<const unsigned char> censored,
                     const Eigen::Ref<const Eigen::MatrixXd>& rows, const ModelParams& params,
                     EvalStats* stats = nullptr);

/// N x S matrix of log pi_s + sum_t log theta_{its}.
Eigen::MatrixXd segment_log_joint(const FitData& data, const ModelParams& params, EvalStats* stats = nullptr);

/// Negative log-likelihood over theta_u with an analytic gradient. Child
/// contributions are summed in fixed-size chunks and the chunk partials are
/// combined pairwise, so results do not depend on the thread count.
class Likelihood {
 public:
  Likelihood(const FitData& data, ParamLayout layout, int threads = 1);

  double value(const Eigen::VectorXd& theta_u, EvalStats* stats = nullptr) const;
  double value_and_gradient(const Eigen::VectorXd& theta_u, Eigen::VectorXd& grad,
                            EvalStats* stats = nullptr) const;
  /// Central finite differences of value(); a debugging fallback.
  Eigen::VectorXd gradient_fd(const Eigen::VectorXd& theta_u, double rel_step = 1e-5) const;

  /// sum log Omega(y, c | z = y), the constant dropped from the objective.
  double log_omega_constant() const;

  const FitData& data() const { return *data_; }
  const ParamLayout& layout() const { return layout_; }
  int threads() const { return threads_; }

 private:
  const FitData* data_;
  ParamLayout layout_;
  int threads_;
};

double total_negloglik(const Eigen::VectorXd& theta_u, const FitData& data, const ParamLayout& layout,
                       bool include_omega = false, int threads = 1);

}  // namespace cmm
