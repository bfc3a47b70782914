#include "cmm/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cmm/error.hpp"
#include "cmm/inference.hpp"

namespace cmm {

namespace {

constexpr double kDegenerateShare = 1e-4;

GradObjective grad_objective(const Likelihood& lik) {
  return [&lik](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    try {
      if (g) return lik.value_and_gradient(x, *g);
      return lik.value(x);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical) throw;
      if (g) g->setConstant(x.size(), std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::infinity();
    }
  };
}

}  // namespace

void FitConfig::validate() const {
  if (segments < 1) fail(ErrorKind::config, "segments must be at least 1");
  if (!(reltol > 0.0)) fail(ErrorKind::config, "reltol must be positive");
  if (max_iters < 1) fail(ErrorKind::config, "max_iters must be positive");
  if (warm_start_n < 0) fail(ErrorKind::config, "warm_start_n must be nonnegative");
  if (threads < 1) fail(ErrorKind::config, "threads must be positive");
  if (!(grad_tol > 0.0)) fail(ErrorKind::config, "grad_tol must be positive");
  if (!(hessian_rel_step > 0.0) || !(hessian_abs_step > 0.0)) fail(ErrorKind::config, "Hessian steps must be positive");
  if (!(phi_floor > 0.0) || phi_floor >= 0.25) fail(ErrorKind::config, "phi_floor must lie in (0, 0.25)");
}

InflationWeights initial_phi(const std::vector<int>& uncensored_y, double floor) {
  std::array<double, kSupport> h{};
  for (int y : uncensored_y) {
    if (y >= 0 && y <= kCards) h[y] += 1.0;
  }
  const double n = static_cast<double>(uncensored_y.size());
  if (n > 0) {
    for (double& v : h) v /= n;
  }
  auto excess = [&](int ell) {
    const double left = ell > 0 ? h[ell - 1] : h[ell + 1];
    const double right = ell < kCards ? h[ell + 1] : h[ell - 1];
    return std::max(0.0, h[ell] - 0.5 * (left + right));
  };
  double zero = excess(0), attract = 0.0, last = excess(31);
  for (int a : kAttractSet) attract += excess(a);
  std::array<double, 3> extra{std::max(floor, zero), std::max(floor, attract), std::max(floor, last)};
  const double total = extra[0] + extra[1] + extra[2];
  constexpr double kMaxExtra = 0.9;
  if (total > kMaxExtra) {
    for (double& e : extra) e *= kMaxExtra / total;
  }
  InflationWeights w;
  w.phi = {1.0 - (extra[0] + extra[1] + extra[2]), extra[0], extra[1], extra[2]};
  return w;
}

FreeParams initialize(const FitData& data, const ParamLayout& layout, const FitConfig& cfg) {
  const int s = layout.segments;
  FreeParams f;
  f.gamma_u = Eigen::VectorXd::Zero(s + layout.blocks.n_free);
  for (int k = 0; k < s; ++k) f.gamma_u(k) = 32.0 * (k + 1) / (s + 1);
  f.log_delta = 0.0;
  std::vector<int> uncensored;
  for (std::size_t r = 0; r < data.n_rows(); ++r) {
    if (!data.censored[r]) uncensored.push_back(data.y[r]);
  }
  const InflationWeights w = initial_phi(uncensored, cfg.phi_floor);
  for (int m = 0; m < 3; ++m) f.tau[m] = std::log(w.phi[m] / w.phi[3]);
  f.sigma = Eigen::VectorXd::Zero(s - 1);
  return f;
}

FitData subset_fit_data(const FitData& data, const std::vector<std::size_t>& positions) {
  FitData out;
  std::vector<Eigen::Index> rows;
  out.child_begin.push_back(0);
  for (std::size_t i : positions) {
    if (i >= data.n_children()) fail(ErrorKind::internal, "subsample position out of range");
    for (std::size_t r = data.child_begin[i]; r < data.child_begin[i + 1]; ++r) {
      rows.push_back(static_cast<Eigen::Index>(r));
      out.y.push_back(data.y[r]);
      out.censored.push_back(data.censored[r]);
      out.setting.push_back(data.setting[r]);
    }
    out.child_begin.push_back(out.y.size());
    out.child_ids.push_back(data.child_ids[i]);
  }
  out.x_free = data.x_free(rows, Eigen::all);
  out.x_full = data.x_full(rows, Eigen::all);
  return out;
}

std::vector<std::size_t> warm_start_sample(std::size_t n_children, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n_children);
  std::iota(idx.begin(), idx.end(), 0);
  if (n >= n_children) return idx;
  Rng rng(seed);
  // Partial Fisher-Yates; the first n slots form the sample.
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n_children - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

FreeParams warm_start(const FitData& data, const ParamLayout& layout, const FitConfig& cfg, bool* used_subsample) {
  if (used_subsample) *used_subsample = false;
  const FreeParams cold = initialize(data, layout, cfg);
  const std::size_t n = static_cast<std::size_t>(cfg.warm_start_n);
  if (n == 0 || n >= data.n_children()) return cold;
  try {
    const FitData sub = subset_fit_data(data, warm_start_sample(data.n_children(), n, cfg.seed));
    const Likelihood lik(sub, layout, cfg.threads);
    BfgsOptions opts;
    opts.reltol = cfg.reltol;
    opts.max_iters = cfg.max_iters;
    const BfgsResult r = bfgs_minimize(grad_objective(lik), cold.flat(), opts);
    if (!std::isfinite(r.f) || !r.x.allFinite()) return cold;
    if (used_subsample) *used_subsample = true;
    return FreeParams::from_flat(sort_free_segments(r.x, layout), layout);
  } catch (const Error&) {
    return cold;
  }
}

Eigen::VectorXd sort_free_segments(const Eigen::VectorXd& theta_u, const ParamLayout& layout) {
  const int s = layout.segments;
  FreeParams f = FreeParams::from_flat(theta_u, layout);
  std::vector<int> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f.gamma_u(a) < f.gamma_u(b); });
  bool identity = true;
  for (int k = 0; k < s; ++k) identity = identity && order[k] == k;
  if (identity) return theta_u;
  const Eigen::VectorXd pi = softmax_with_pivot(f.sigma);
  Eigen::VectorXd alpha(s), pi_sorted(s);
  for (int k = 0; k < s; ++k) {
    alpha(k) = f.gamma_u(order[k]);
    pi_sorted(k) = pi(order[k]);
  }
  f.gamma_u.head(s) = alpha;
  // Logits relative to the new last segment, from the old logits to stay exact.
  Eigen::VectorXd logit(s);
  logit << f.sigma, 0.0;
  const double pivot = logit(order[s - 1]);
  for (int k = 0; k < s - 1; ++k) f.sigma(k) = logit(order[k]) - pivot;
  return f.flat();
}

FitResult fit(const FitData& data, const BlockMap& blocks, const FitConfig& cfg) {
  cfg.validate();
  const ParamLayout layout{cfg.segments, blocks};
  bool warmed = false;
  const FreeParams start = warm_start(data, layout, cfg, &warmed);
  FitResult r = fit_from(data, layout, cfg, start.flat());
  r.warm_started = warmed;
  return r;
}

FitResult fit_from(const FitData& data, const ParamLayout& layout, const FitConfig& cfg,
                   const Eigen::VectorXd& start) {
  cfg.validate();
  if (start.size() != layout.n_free()) fail(ErrorKind::internal, "start vector has the wrong length");
  const Likelihood lik(data, layout, cfg.threads);
  const GradObjective obj = grad_objective(lik);

  BfgsOptions opts;
  opts.reltol = cfg.reltol;
  opts.max_iters = cfg.max_iters;
  const BfgsResult bfgs = bfgs_minimize(obj, start, opts);

  FitResult res;
  res.layout = layout;
  res.config = cfg;
  res.iterations = bfgs.iterations;
  res.evaluations = bfgs.evaluations;
  res.optimizer_stop = to_string(bfgs.stop);
  res.n_children = data.n_children();
  res.n_rows = data.n_rows();
  res.n_params = layout.n_free();

  Eigen::VectorXd x = sort_free_segments(bfgs.x, layout);
  Eigen::VectorXd grad;
  double f = obj(x, &grad);
  ++res.evaluations;

  if (cfg.compute_se) {
    const HessianResult hr = numerical_hessian([&](const Eigen::VectorXd& v) { return obj(v, nullptr); }, x,
                                               cfg.hessian_rel_step, cfg.hessian_abs_step);
    res.evaluations += hr.evaluations;
    res.hessian = 0.5 * (hr.h + hr.h.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(res.hessian, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    res.hessian_condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    res.hessian_singular = !(lo > 0.0) || res.hessian_condition > 1e14;

    // One Newton-Raphson step, kept only if it does not raise the objective.
    if (!res.hessian_singular) {
      const Eigen::VectorXd step = res.hessian.ldlt().solve(grad);
      const Eigen::VectorXd x_new = x - step;
      Eigen::VectorXd g_new;
      const double f_new = obj(x_new, &g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= f && g_new.allFinite()) {
        x = sort_free_segments(x_new, layout);
        if (x != x_new) f = obj(x, &g_new);
        else f = f_new;
        grad = g_new;
        res.polish_accepted = true;
      }
    }
  }

  res.free = FreeParams::from_flat(x, layout);
  res.params = expand(res.free, layout);
  res.loglik = -f;
  res.gradient_norm = grad.lpNorm<Eigen::Infinity>();
  res.bic = bic(res.loglik, res.n_params, res.n_children);
  EvalStats stats;
  lik.value(x, &stats);
  res.floored_terms = stats.floored_terms;
  for (int k = 0; k < layout.segments; ++k) {
    if (res.params.pi(k) < kDegenerateShare) res.degenerate_segments.push_back(k);
  }
  if (cfg.compute_se && !res.hessian_singular) {
    const Eigen::MatrixXd sigma_u = res.hessian.ldlt().solve(Eigen::MatrixXd::Identity(x.size(), x.size()));
    const DeltaResult dr = delta_method_cov(res.free, sigma_u, layout);
    res.cov_theta = dr.cov;
    res.se = dr.se;
    res.se_input_symmetrized = dr.input_was_symmetrized;
  }
  res.converged = bfgs.stop != BfgsStop::max_iters && std::isfinite(f) && res.gradient_norm <= cfg.grad_tol;
  return res;
}

}  // namespace cmm
