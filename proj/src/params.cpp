#include "cmm/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmm/error.hpp"

namespace cmm {

std::vector<std::string> ParamLayout::theta_names() const {
  std::vector<std::string> names;
  for (int s = 0; s < segments; ++s) names.push_back("alpha_" + std::to_string(s + 1));
  for (const auto& c : blocks.column_names) names.push_back("beta[" + c + "]");
  names.push_back("delta");
  for (int m = 0; m < 4; ++m) names.push_back("phi_" + std::to_string(m + 1));
  for (int s = 0; s < segments; ++s) names.push_back("pi_" + std::to_string(s + 1));
  return names;
}

Eigen::VectorXd ModelParams::flat() const {
  Eigen::VectorXd v(alpha.size() + beta.size() + 1 + 4 + pi.size());
  Eigen::Index k = 0;
  v.segment(k, alpha.size()) = alpha;
  k += alpha.size();
  v.segment(k, beta.size()) = beta;
  k += beta.size();
  v(k++) = delta;
  for (double w : phi.phi) v(k++) = w;
  v.segment(k, pi.size()) = pi;
  return v;
}

void ModelParams::validate(const BlockMap& bm) const {
  if (alpha.size() < 1) fail(ErrorKind::invalid_parameter, "at least one segment is required");
  if (pi.size() != alpha.size()) fail(ErrorKind::invalid_parameter, "alpha and pi lengths differ");
  if (beta.size() != bm.n_columns) fail(ErrorKind::invalid_parameter, "beta length does not match the design");
  if (!(delta > 0.0) || !std::isfinite(delta)) fail(ErrorKind::invalid_parameter, "delta must be positive");
  phi.validate();
  if ((pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9) {
    fail(ErrorKind::invalid_parameter, "segment probabilities must lie on the simplex");
  }
  for (const Block& b : bm.blocks) {
    if (std::abs(beta.segment(b.offset, b.length).sum()) > 1e-8) {
      fail(ErrorKind::invalid_parameter, "block '" + b.name + "' does not sum to zero");
    }
  }
}

Eigen::VectorXd FreeParams::flat() const {
  Eigen::VectorXd v(gamma_u.size() + 1 + 3 + sigma.size());
  v << gamma_u, log_delta, tau[0], tau[1], tau[2], sigma;
  return v;
}

FreeParams FreeParams::from_flat(const Eigen::VectorXd& v, const ParamLayout& layout) {
  if (v.size() != layout.n_free()) fail(ErrorKind::invalid_parameter, "free parameter vector has the wrong length");
  FreeParams f;
  const int ng = layout.segments + layout.blocks.n_free;
  f.gamma_u = v.head(ng);
  f.log_delta = v(ng);
  f.tau = {v(ng + 1), v(ng + 2), v(ng + 3)};
  f.sigma = v.tail(layout.segments - 1);
  return f;
}

Eigen::VectorXd softmax_with_pivot(const Eigen::VectorXd& logits) {
  const Eigen::Index k = logits.size();
  const double top = std::max(0.0, k > 0 ? logits.maxCoeff() : 0.0);
  Eigen::VectorXd w(k + 1);
  w.head(k) = (logits.array() - top).exp();
  w(k) = std::exp(-top);
  return w / w.sum();
}

Eigen::MatrixXd softmax_with_pivot_jacobian(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd w = softmax_with_pivot(logits);
  const Eigen::Index k = logits.size();
  Eigen::MatrixXd j(k + 1, k);
  for (Eigen::Index m = 0; m <= k; ++m) {
    for (Eigen::Index c = 0; c < k; ++c) j(m, c) = w(m) * ((m == c ? 1.0 : 0.0) - w(c));
  }
  return j;
}

Eigen::VectorXd softmax_pivot_logits(const Eigen::VectorXd& weights) {
  const Eigen::Index k = weights.size() - 1;
  if (!(weights(k) > 0.0)) fail(ErrorKind::invalid_parameter, "pivot weight must be positive");
  Eigen::VectorXd logits(k);
  for (Eigen::Index m = 0; m < k; ++m) {
    if (!(weights(m) > 0.0)) fail(ErrorKind::invalid_parameter, "simplex weight must be positive to take logits");
    logits(m) = std::log(weights(m) / weights(k));
  }
  return logits;
}

ModelParams expand(const FreeParams& free, const ParamLayout& layout) {
  ModelParams p;
  auto [alpha, beta] = sum_zero_expand(free.gamma_u, layout.blocks, layout.segments);
  p.alpha = std::move(alpha);
  p.beta = std::move(beta);
  p.delta = std::exp(free.log_delta);
  const Eigen::VectorXd phi = softmax_with_pivot(Eigen::Vector3d(free.tau[0], free.tau[1], free.tau[2]));
  for (int m = 0; m < 4; ++m) p.phi.phi[m] = phi(m);
  p.pi = softmax_with_pivot(free.sigma);
  return p;
}

FreeParams collapse(const ModelParams& params, const ParamLayout& layout) {
  const int s = layout.segments;
  FreeParams f;
  // The expansion map is injective; solve A gamma_u = gamma exactly.
  const Eigen::MatrixXd a = expansion_matrix(layout.blocks, s);
  Eigen::VectorXd gamma(s + layout.blocks.n_columns);
  gamma << params.alpha, params.beta;
  f.gamma_u = a.colPivHouseholderQr().solve(gamma);
  f.log_delta = std::log(params.delta);
  const Eigen::Vector4d phi(params.phi.phi[0], params.phi.phi[1], params.phi.phi[2], params.phi.phi[3]);
  const Eigen::VectorXd tau = softmax_pivot_logits(phi);
  f.tau = {tau(0), tau(1), tau(2)};
  f.sigma = softmax_pivot_logits(params.pi);
  return f;
}

Eigen::MatrixXd jacobian_of_expand(const FreeParams& free, const ParamLayout& layout) {
  const int s = layout.segments;
  const int ng = s + layout.blocks.n_free;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(layout.n_theta(), layout.n_free());
  j.block(0, 0, s + layout.blocks.n_columns, ng) = expansion_matrix(layout.blocks, s);
  j(layout.theta_delta(), ng) = std::exp(free.log_delta);
  j.block(layout.theta_phi(), ng + 1, 4, 3) =
      softmax_with_pivot_jacobian(Eigen::Vector3d(free.tau[0], free.tau[1], free.tau[2]));
  if (s > 1) j.block(layout.theta_pi(), ng + 4, s, s - 1) = softmax_with_pivot_jacobian(free.sigma);
  return j;
}

DeltaResult delta_method_cov(const FreeParams& free, const Eigen::MatrixXd& sigma_u, const ParamLayout& layout) {
  if (sigma_u.rows() != layout.n_free() || sigma_u.cols() != layout.n_free()) {
    fail(ErrorKind::invalid_parameter, "covariance has the wrong dimension");
  }
  DeltaResult out;
  Eigen::MatrixXd sym = 0.5 * (sigma_u + sigma_u.transpose());
  const double scale = std::max(1.0, sigma_u.cwiseAbs().maxCoeff());
  if ((sym - sigma_u).cwiseAbs().maxCoeff() > 1e-10 * scale) out.input_was_symmetrized = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().size() > 0 && eig.eigenvalues().minCoeff() < -1e-8 * scale) {
    out.input_was_symmetrized = true;
  }
  const Eigen::MatrixXd j = jacobian_of_expand(free, layout);
  out.cov = j * sym * j.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.se = out.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

std::vector<int> sort_segments_by_alpha(ModelParams& params) {
  std::vector<int> order(params.alpha.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return params.alpha(a) < params.alpha(b); });
  Eigen::VectorXd alpha(params.alpha.size()), pi(params.pi.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    alpha(k) = params.alpha(order[k]);
    pi(k) = params.pi(order[k]);
  }
  params.alpha = alpha;
  params.pi = pi;
  return order;
}

}  // namespace cmm
