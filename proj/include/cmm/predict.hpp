#pragma once

// Point predictions, aggregated predicted outcome distributions, their
// censoring-adjusted counterparts and RMSE/MAD evaluation.

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "cmm/cct.hpp"
#include "cmm/likelihood.hpp"
#include "cmm/params.hpp"

namespace cmm {

inline constexpr int kExpectationCap = 100;

/// `support32` uses the fitted distribution on {0..32} with the base tail
/// lumped at 32. `appendix_c` evaluates the base pmf up to M with the tail
/// above M folded onto M, and reports f(32) rather than the lump at 32.
enum class PredictMode { support32, appendix_c };

/// Pr(Z = l) on {0..M} under the extended form (base pmf beyond 32, tail folded at M).
std::vector<double> extended_pmf(const InflatedNB& d, int m = kExpectationCap);

/// E(Z) for one distribution under the chosen mode.
double expected_value(const InflatedNB& d, PredictMode mode, int m = kExpectationCap);

/// sum_s pi_s E(Z | mu_s) for one full-coded design row.
double expected_cards(const ModelParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& x_full,
                      PredictMode mode = PredictMode::support32, int m = kExpectationCap);

/// expected_cards for every row of the data, in row order.
std::vector<double> predict_trials(const ModelParams& params, const FitData& data,
                                   PredictMode mode = PredictMode::support32);

using Distribution33 = std::array<double, kSupport>;

/// Mean over rows of sum_s pi_s Pr(Z = l | mu_s), l = 0..32.
Distribution33 aggregate_distribution(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& x_full,
                                      PredictMode mode = PredictMode::support32);

/// `marginal` scales entry k by the marginal censoring probability p_k.
/// `survival` uses Pr(Z >= k) p_k, the exact probability of a censored round
/// ending at card k.
enum class CensorCorrection { marginal, survival };

Distribution33 censor_correct(const Distribution33& dist, const GameSetting& s,
                              CensorCorrection how = CensorCorrection::marginal);

struct Evaluation {
  double rmse = 0.0;
  double mad = 0.0;
  std::size_t n = 0;  // uncensored trials used
};

/// RMSE and mean absolute deviation over uncensored trials.
Evaluation evaluate(const std::vector<double>& y_hat, const std::vector<int>& y,
                    const std::vector<unsigned char>& censored);

}  // namespace cmm
