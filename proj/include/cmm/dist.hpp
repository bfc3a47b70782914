#pragma once

// Negative binomial primitives, the softplus inverse link, and the
// multiply-inflated outcome distribution on {0, ..., 32}.

#include <array>
#include <cstddef>

namespace cmm {

inline constexpr int kCards = 32;
inline constexpr int kSupport = kCards + 1;  // outcomes 0..32

/// Outcomes that receive the geometric-pattern inflation mass.
inline constexpr std::array<int, 7> kAttractSet{4, 8, 10, 12, 16, 20, 24};

constexpr bool in_attract_set(int ell) {
  for (int a : kAttractSet) {
    if (a == ell) return true;
  }
  return false;
}

/// Negative binomial with mean `mu` and shape `delta` (= 1/kappa).
/// Variance is mu + mu^2 / delta.
struct NegBinParams {
  double mu = 1.0;
  double delta = 1.0;

  void validate() const;
};

/// Simplex weights: phi[0] base distribution, phi[1] mass at 0,
/// phi[2] mass spread uniformly over the attract set, phi[3] mass at 31.
struct InflationWeights {
  std::array<double, 4> phi{1.0, 0.0, 0.0, 0.0};

  void validate() const;
};

struct InflatedNB {
  NegBinParams base;
  InflationWeights weights;
};

using OutcomeTable = std::array<double, kSupport>;

double nb_log_pmf(int z, const NegBinParams& p);
double nb_pmf(int z, const NegBinParams& p);

/// Pr(X <= k); zero for k = -1.
double nb_cdf(int k, const NegBinParams& p);

/// Pr(X >= k). Summed directly over the upper tail when the tail is small so
/// that tiny tails keep their relative precision.
double nb_upper_tail(int k, const NegBinParams& p);

/// log(1 + exp(eta)), overflow-safe.
double softplus(double eta);
/// Logistic function, the derivative of softplus.
double softplus_deriv(double eta);
/// Inverse of softplus for positive arguments.
double softplus_inverse(double mu);

/// Base probabilities on {0..32}: f(0..31) and the upper tail Pr(X >= 32)
/// lumped at 32.
OutcomeTable base_table(const NegBinParams& p);

double inflated_pmf(int ell, const InflatedNB& d);
double inflated_cdf(int k, const InflatedNB& d);
OutcomeTable inflated_table(const InflatedNB& d);

/// Adds the inflation masses to a base table already scaled by phi[0].
void add_inflation(OutcomeTable& t, const InflationWeights& w);

/// Base table with derivatives with respect to mu and delta, filled by the
/// ratio recurrence f(z+1) = f(z) (delta+z)/(z+1) * mu/(mu+delta).
struct BaseTableWithGrad {
  OutcomeTable f{};
  OutcomeTable dmu{};
  OutcomeTable ddelta{};
};

/// `inv_delta_plus` must hold 1/(delta + z) for z = 0..31; callers evaluating
/// many tables at one delta compute it once.
void base_table_with_grad(double mu, double delta,
                          const std::array<double, kCards>& inv_delta_plus,
                          BaseTableWithGrad& out);

std::array<double, kCards> inverse_delta_offsets(double delta);

/// Same arithmetic as base_table_with_grad for the probabilities only.
void base_table_values(double mu, double delta, OutcomeTable& f);

}  // namespace cmm
