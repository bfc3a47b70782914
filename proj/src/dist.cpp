#include "cmm/dist.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cmm/error.hpp"

namespace cmm {

namespace {

// log Gamma(delta + z) - log Gamma(delta). Summing logs avoids the
// cancellation between two large lgamma values when delta is large.
double log_rising(double delta, int z) {
  if (z <= 200) {
    double acc = 0.0;
    for (int j = 0; j < z; ++j) acc += std::log(delta + j);
    return acc;
  }
  return std::lgamma(delta + z) - std::lgamma(delta);
}

constexpr double kTailSwitch = 1e-3;

}  // namespace

void NegBinParams::validate() const {
  if (!(mu > 0.0) || !std::isfinite(mu)) {
    fail(ErrorKind::invalid_parameter, "negative binomial mean must be positive, got " + std::to_string(mu));
  }
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    fail(ErrorKind::invalid_parameter,
         "negative binomial dispersion must be positive, got " + std::to_string(delta));
  }
}

void InflationWeights::validate() const {
  double sum = 0.0;
  for (double w : phi) {
    if (!(w >= 0.0 && w <= 1.0)) {
      fail(ErrorKind::invalid_parameter, "inflation weight outside [0, 1]");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    fail(ErrorKind::invalid_parameter, "inflation weights do not sum to one");
  }
}

double nb_log_pmf(int z, const NegBinParams& p) {
  p.validate();
  if (z < 0) return -std::numeric_limits<double>::infinity();
  const double log_q = -std::log1p(p.mu / p.delta);   // log(delta / (delta + mu))
  const double log_r = -std::log1p(p.delta / p.mu);   // log(mu / (mu + delta))
  return log_rising(p.delta, z) - std::lgamma(z + 1.0) + p.delta * log_q + z * log_r;
}

double nb_pmf(int z, const NegBinParams& p) { return std::exp(nb_log_pmf(z, p)); }

double nb_cdf(int k, const NegBinParams& p) {
  p.validate();
  if (k < -1) fail(ErrorKind::out_of_support, "cdf argument below -1");
  double acc = 0.0;
  for (int z = 0; z <= k; ++z) acc += nb_pmf(z, p);
  return std::min(acc, 1.0);
}

double nb_upper_tail(int k, const NegBinParams& p) {
  p.validate();
  if (k <= 0) return 1.0;
  const double complement = 1.0 - nb_cdf(k - 1, p);
  if (complement > kTailSwitch) return complement;

  const double r = p.mu / (p.mu + p.delta);
  double term = nb_pmf(k, p);
  double acc = 0.0;
  for (int z = k; z < k + 1000000; ++z) {
    acc += term;
    if (z > p.mu && term <= 1e-17 * acc) break;
    term *= (p.delta + z) / (z + 1.0) * r;
  }
  return acc;
}

double softplus(double eta) {
  if (eta > 0.0) return eta + std::log1p(std::exp(-eta));
  return std::log1p(std::exp(eta));
}

double softplus_deriv(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double softplus_inverse(double mu) {
  if (!(mu > 0.0)) fail(ErrorKind::invalid_parameter, "softplus inverse needs a positive argument");
  if (mu > 30.0) return mu + std::log1p(-std::exp(-mu));
  return std::log(std::expm1(mu));
}

OutcomeTable base_table(const NegBinParams& p) {
  p.validate();
  OutcomeTable t{};
  for (int z = 0; z < kCards; ++z) t[z] = nb_pmf(z, p);
  t[kCards] = nb_upper_tail(kCards, p);
  return t;
}

void add_inflation(OutcomeTable& t, const InflationWeights& w) {
  t[0] += w.phi[1];
  const double spread = w.phi[2] / static_cast<double>(kAttractSet.size());
  for (int a : kAttractSet) t[a] += spread;
  t[31] += w.phi[3];
}

OutcomeTable inflated_table(const InflatedNB& d) {
  d.weights.validate();
  OutcomeTable t = base_table(d.base);
  for (double& v : t) v *= d.weights.phi[0];
  add_inflation(t, d.weights);
  return t;
}

double inflated_pmf(int ell, const InflatedNB& d) {
  if (ell < 0 || ell > kCards) {
    fail(ErrorKind::out_of_support, "outcome " + std::to_string(ell) + " outside {0..32}");
  }
  d.weights.validate();
  const auto& phi = d.weights.phi;
  double v = phi[0] * (ell == kCards ? nb_upper_tail(kCards, d.base) : nb_pmf(ell, d.base));
  if (ell == 0) v += phi[1];
  if (in_attract_set(ell)) v += phi[2] / static_cast<double>(kAttractSet.size());
  if (ell == 31) v += phi[3];
  return v;
}

double inflated_cdf(int k, const InflatedNB& d) {
  if (k < -1 || k > kCards) {
    fail(ErrorKind::out_of_support, "cdf argument " + std::to_string(k) + " outside {-1..32}");
  }
  if (k == kCards) return 1.0;
  const OutcomeTable t = inflated_table(d);
  double acc = 0.0;
  for (int ell = 0; ell <= k; ++ell) acc += t[ell];
  return acc;
}

std::array<double, kCards> inverse_delta_offsets(double delta) {
  std::array<double, kCards> inv{};
  for (int z = 0; z < kCards; ++z) inv[z] = 1.0 / (delta + z);
  return inv;
}

namespace {

// Shared by the value-only and gradient tables so both produce bit-identical
// probabilities.
template <bool WithGrad>
void fill_base_table(double mu, double delta, const double* inv_delta_plus, double* f_out,
                     double* dmu_out, double* ddelta_out) {
  const double r = mu / (mu + delta);
  const double inv_mu_delta = 1.0 / (mu + delta);
  const double log_q = -std::log1p(mu / delta);
  const double log_f0 = delta * log_q;
  const double dmu_scale = delta / (mu * (delta + mu));

  // d log f / d delta follows D(z+1) = D(z) + 1/(delta+z) - 1/(mu+delta).
  double dlog_delta = log_q + mu * inv_mu_delta;

  double sum_f = 0.0, sum_dmu = 0.0, sum_ddelta = 0.0;
  const bool direct = log_f0 > -700.0;
  const double log_r = direct ? 0.0 : std::log(r);
  double f = direct ? std::exp(log_f0) : 0.0;
  double log_f = log_f0;
  for (int z = 0; z < kCards; ++z) {
    if (!direct) f = std::exp(log_f);
    f_out[z] = f;
    sum_f += f;
    if constexpr (WithGrad) {
      dmu_out[z] = f * (z - mu) * dmu_scale;
      ddelta_out[z] = f * dlog_delta;
      sum_dmu += dmu_out[z];
      sum_ddelta += ddelta_out[z];
      dlog_delta += inv_delta_plus[z] - inv_mu_delta;
    }
    if (direct) {
      f *= (delta + z) / (z + 1.0) * r;
    } else {
      log_f += std::log((delta + z) / (z + 1.0)) + log_r;
    }
  }

  const double tail = 1.0 - sum_f;
  if (tail > kTailSwitch) {
    f_out[kCards] = tail;
    if constexpr (WithGrad) {
      dmu_out[kCards] = -sum_dmu;
      ddelta_out[kCards] = -sum_ddelta;
    }
    return;
  }

  // Small tail: sum it directly so it keeps relative precision.
  double term = f_out[kCards - 1] * (delta + kCards - 1) / static_cast<double>(kCards) * r;
  double tf = 0.0, tmu = 0.0, tdelta = 0.0;
  for (int z = kCards; z < kCards + 1000000; ++z) {
    tf += term;
    if constexpr (WithGrad) {
      tmu += term * (z - mu) * dmu_scale;
      tdelta += term * dlog_delta;
      dlog_delta += 1.0 / (delta + z) - inv_mu_delta;
    }
    if (z > mu && term <= 1e-17 * tf) break;
    term *= (delta + z) / (z + 1.0) * r;
  }
  f_out[kCards] = tf;
  if constexpr (WithGrad) {
    dmu_out[kCards] = tmu;
    ddelta_out[kCards] = tdelta;
  }
}

}  // namespace

void base_table_with_grad(double mu, double delta, const std::array<double, kCards>& inv_delta_plus,
                          BaseTableWithGrad& out) {
  fill_base_table<true>(mu, delta, inv_delta_plus.data(), out.f.data(), out.dmu.data(), out.ddelta.data());
}

void base_table_values(double mu, double delta, OutcomeTable& f) {
  fill_base_table<false>(mu, delta, nullptr, f.data(), nullptr, nullptr);
}

}  // namespace cmm
