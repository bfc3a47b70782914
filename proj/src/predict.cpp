#include "cmm/predict.hpp"

#include <cmath>

#include "cmm/error.hpp"

namespace cmm {

std::vector<double> extended_pmf(const InflatedNB& d, int m) {
  if (m < kCards) fail(ErrorKind::invalid_parameter, "the expectation cap must be at least 32");
  d.base.validate();
  d.weights.validate();
  const auto& phi = d.weights.phi;
  std::vector<double> out(m + 1);
  for (int ell = 0; ell < m; ++ell) out[ell] = phi[0] * nb_pmf(ell, d.base);
  out[m] = phi[0] * nb_upper_tail(m, d.base);
  out[0] += phi[1];
  for (int a : kAttractSet) out[a] += phi[2] / static_cast<double>(kAttractSet.size());
  out[31] += phi[3];
  return out;
}

double expected_value(const InflatedNB& d, PredictMode mode, int m) {
  double e = 0.0;
  if (mode == PredictMode::support32) {
    const OutcomeTable t = inflated_table(d);
    for (int ell = 0; ell < kSupport; ++ell) e += ell * t[ell];
  } else {
    const std::vector<double> t = extended_pmf(d, m);
    for (int ell = 0; ell <= m; ++ell) e += ell * t[ell];
  }
  return e;
}

double expected_cards(const ModelParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& x_full,
                      PredictMode mode, int m) {
  if (x_full.size() != params.beta.size()) fail(ErrorKind::invalid_parameter, "design row does not match beta");
  const double xb = x_full.dot(params.beta);
  double e = 0.0;
  for (int s = 0; s < params.segments(); ++s) {
    const InflatedNB d{{std::max(softplus(params.alpha(s) + xb), 1e-300), params.delta}, params.phi};
    e += params.pi(s) * expected_value(d, mode, m);
  }
  return e;
}

std::vector<double> predict_trials(const ModelParams& params, const FitData& data, PredictMode mode) {
  std::vector<double> out(data.n_rows());
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    out[r] = expected_cards(params, data.x_full.row(static_cast<Eigen::Index>(r)), mode);
  }
  return out;
}

Distribution33 aggregate_distribution(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& x_full,
                                      PredictMode mode) {
  if (x_full.rows() < 1) fail(ErrorKind::data, "aggregation needs at least one row");
  if (x_full.cols() != params.beta.size()) fail(ErrorKind::invalid_parameter, "design does not match beta");
  Distribution33 acc{};
  const Eigen::VectorXd xb = x_full * params.beta;
  for (Eigen::Index r = 0; r < x_full.rows(); ++r) {
    for (int s = 0; s < params.segments(); ++s) {
      const InflatedNB d{{std::max(softplus(params.alpha(s) + xb(r)), 1e-300), params.delta}, params.phi};
      if (mode == PredictMode::support32) {
        const OutcomeTable t = inflated_table(d);
        for (int ell = 0; ell < kSupport; ++ell) acc[ell] += params.pi(s) * t[ell];
      } else {
        const std::vector<double> t = extended_pmf(d, kExpectationCap);
        for (int ell = 0; ell < kSupport; ++ell) acc[ell] += params.pi(s) * t[ell];
      }
    }
  }
  for (double& v : acc) v /= static_cast<double>(x_full.rows());
  return acc;
}

Distribution33 censor_correct(const Distribution33& dist, const GameSetting& s, CensorCorrection how) {
  s.validate();
  Distribution33 out{};
  double tail = 0.0;
  for (int k = kCards; k >= 1; --k) {
    tail += dist[k];
    const double weight = how == CensorCorrection::marginal ? dist[k] : tail;
    out[k] = weight * marginal_censor_prob(k, s);
  }
  return out;
}

Evaluation evaluate(const std::vector<double>& y_hat, const std::vector<int>& y,
                    const std::vector<unsigned char>& censored) {
  if (y_hat.size() != y.size() || y.size() != censored.size()) {
    fail(ErrorKind::data, "predictions and trials are not aligned");
  }
  Evaluation ev;
  double sq = 0.0, ab = 0.0;
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (censored[r]) continue;
    const double e = static_cast<double>(y[r]) - y_hat[r];
    sq += e * e;
    ab += std::abs(e);
    ++ev.n;
  }
  if (ev.n == 0) fail(ErrorKind::data, "no uncensored trials to evaluate");
  ev.rmse = std::sqrt(sq / static_cast<double>(ev.n));
  ev.mad = ab / static_cast<double>(ev.n);
  return ev;
}

}  // namespace cmm
