#include "cmm/inference.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>

#include "cmm/error.hpp"

namespace cmm {

Eigen::MatrixXd posteriors(const FitData& data, const ModelParams& params, EvalStats* stats) {
  Eigen::MatrixXd joint = segment_log_joint(data, params, stats);
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    const double top = joint.row(i).maxCoeff();
    const double lse = top + std::log((joint.row(i).array() - top).exp().sum());
    joint.row(i) = (joint.row(i).array() - lse).exp();
    joint.row(i) /= joint.row(i).sum();
  }
  return joint;
}

Eigen::MatrixXd posteriors(const FitResult& fit, const FitData& data) { return posteriors(data, fit.params); }

double bic(double loglik, int n_params, std::size_t n_units) {
  if (n_units < 1) fail(ErrorKind::invalid_parameter, "BIC needs at least one unit");
  return -2.0 * loglik + n_params * std::log(static_cast<double>(n_units));
}

SelectionReport select_segments(const std::vector<FitResult>& fits, double min_share, double min_alpha_gap_se) {
  SelectionReport rep;
  rep.min_share = min_share;
  rep.min_alpha_gap_se = min_alpha_gap_se;
  std::vector<const FitResult*> sorted;
  for (const auto& f : fits) sorted.push_back(&f);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const FitResult* a, const FitResult* b) { return a->layout.segments < b->layout.segments; });

  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const FitResult& f = *sorted[k];
    SelectionEntry e;
    e.segments = f.layout.segments;
    e.loglik = f.loglik;
    e.bic = f.bic;
    e.n_params = f.n_params;
    e.converged = f.converged;
    e.min_share = f.params.pi.minCoeff();
    e.degenerate = !f.degenerate_segments.empty();
    const int s = e.segments;
    if (s == 1) {
      e.min_alpha_gap_se = std::numeric_limits<double>::infinity();
    } else if (f.cov_theta.size() == 0) {
      e.min_alpha_gap_se = std::numeric_limits<double>::quiet_NaN();
    } else {
      double gap = std::numeric_limits<double>::infinity();
      const int a0 = f.layout.theta_alpha();
      for (int j = 0; j + 1 < s; ++j) {
        const double var = f.cov_theta(a0 + j, a0 + j) + f.cov_theta(a0 + j + 1, a0 + j + 1) -
                           2.0 * f.cov_theta(a0 + j, a0 + j + 1);
        const double diff = std::abs(f.params.alpha(j + 1) - f.params.alpha(j));
        gap = std::min(gap, var > 0.0 ? diff / std::sqrt(var) : (diff > 0.0 ? gap : 0.0));
      }
      e.min_alpha_gap_se = gap;
    }
    e.bic_improves = k > 0 && e.bic < sorted[k - 1]->bic;
    e.passes_share = !e.degenerate && e.min_share >= min_share;
    e.passes_gap = !std::isnan(e.min_alpha_gap_se) && e.min_alpha_gap_se >= min_alpha_gap_se;
    rep.entries.push_back(e);
  }
  for (const auto& e : rep.entries) {
    if (e.passes_share && e.passes_gap) rep.recommended = e.segments;
  }
  if (rep.recommended == 0 && !rep.entries.empty()) {
    rep.override_used = true;
    const auto best = std::min_element(rep.entries.begin(), rep.entries.end(),
                                       [](const SelectionEntry& a, const SelectionEntry& b) { return a.bic < b.bic; });
    rep.recommended = best->segments;
  }
  return rep;
}

WaldProfile weighted_profile(const Eigen::MatrixXd& p_all, const Eigen::VectorXd& score, bool robust) {
  const Eigen::Index n = p_all.rows();
  if (score.size() != n) fail(ErrorKind::data, "score length does not match the posterior matrix");
  if (n == 0 || p_all.cols() == 0) fail(ErrorKind::data, "empty posterior matrix");
  if (!score.allFinite()) fail(ErrorKind::data, "scores must be finite");

  WaldProfile out;
  const Eigen::VectorXd mass = p_all.colwise().sum();
  for (Eigen::Index s = 0; s < p_all.cols(); ++s) {
    if (mass(s) > 1e-8 * static_cast<double>(n)) out.kept_segments.push_back(static_cast<int>(s));
    else out.dropped_segments.push_back(static_cast<int>(s));
  }
  // Drop the lightest remaining column until P'P has full rank.
  Eigen::MatrixXd p;
  while (true) {
    p = p_all(Eigen::all, out.kept_segments);
    if (out.kept_segments.empty()) break;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(p.transpose() * p);
    qr.setThreshold(1e-12);
    if (qr.rank() == p.cols()) break;
    const auto lightest = std::min_element(out.kept_segments.begin(), out.kept_segments.end(),
                                           [&](int a, int b) { return mass(a) < mass(b); });
    out.dropped_segments.push_back(*lightest);
    out.kept_segments.erase(lightest);
  }
  std::sort(out.dropped_segments.begin(), out.dropped_segments.end());
  const Eigen::Index s = p.cols();
  if (s == 0) fail(ErrorKind::data, "no segment carries posterior mass");

  const Eigen::MatrixXd ptp = p.transpose() * p;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(ptp);
  const Eigen::MatrixXd ptp_inv = ldlt.solve(Eigen::MatrixXd::Identity(s, s));
  out.psi = ldlt.solve(p.transpose() * score);
  const Eigen::VectorXd resid = score - p * out.psi;
  Eigen::MatrixXd cov_psi;
  if (robust) {
    const Eigen::MatrixXd meat = p.transpose() * resid.array().square().matrix().asDiagonal() * p;
    cov_psi = ptp_inv * meat * ptp_inv;
  } else {
    const double dof = static_cast<double>(std::max<Eigen::Index>(1, n - s));
    cov_psi = (resid.squaredNorm() / dof) * ptp_inv;
  }
  const Eigen::VectorXd col_mass = p.colwise().sum();
  const Eigen::MatrixXd b = col_mass.cwiseInverse().asDiagonal() * ptp;
  out.psi_star = b * out.psi;
  out.cov = b * cov_psi * b.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());

  out.df = static_cast<int>(s - 1);
  if (out.df == 0) return out;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(s - 1, s);
  for (Eigen::Index j = 0; j + 1 < s; ++j) {
    d(j, j) = -1.0;
    d(j, j + 1) = 1.0;
  }
  const Eigen::VectorXd diff = d * out.psi_star;
  const double scale = std::max(1.0, out.psi_star.cwiseAbs().maxCoeff());
  if (diff.cwiseAbs().maxCoeff() <= 1e-12 * scale) return out;
  const Eigen::MatrixXd v = d * out.cov * d.transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
  if (!(eig.eigenvalues().minCoeff() > 1e-300)) {
    out.statistic = std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
    return out;
  }
  out.statistic = diff.dot(eig.eigenvectors() * (eig.eigenvalues().cwiseInverse().asDiagonal() *
                                                   (eig.eigenvectors().transpose() * diff)));
  out.statistic = std::max(0.0, out.statistic);
  const boost::math::chi_squared chi(out.df);
  out.p_value = boost::math::cdf(boost::math::complement(chi, out.statistic));
  return out;
}

std::string significance_stars(double p_value) {
  if (p_value < 0.01) return "***";
  if (p_value < 0.05) return "**";
  if (p_value < 0.10) return "*";
  return "";
}

}  // namespace cmm
