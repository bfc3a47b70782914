#include "cmm/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "cmm/error.hpp"

namespace cmm {

namespace {

constexpr std::size_t kChunkChildren = 64;

// Number of attract-set points at or above y.
constexpr std::array<int, kSupport + 1> attract_at_or_above() {
  std::array<int, kSupport + 1> out{};
  for (int y = kSupport; y >= 0; --y) {
    out[y] = (y < kSupport ? out[y + 1] : 0) + (y < kSupport && in_attract_set(y) ? 1 : 0);
  }
  return out;
}
constexpr auto kAttractTail = attract_at_or_above();
constexpr double kAttractShare = 1.0 / static_cast<double>(kAttractSet.size());

struct TrialTerm {
  double value = 0.0;
  double dmu = 0.0;
  double ddelta = 0.0;
  std::array<double, 4> dphi{};
};

// theta and its partial derivatives for one trial, given the base table.
template <bool WithGrad>
void trial_term(int y, bool censored, const std::array<double, 4>& phi, const BaseTableWithGrad& t,
                TrialTerm& out) {
  if (!censored) {
    const double base = t.f[y];
    const double w0 = y == 0 ? 1.0 : 0.0;
    const double wa = in_attract_set(y) ? kAttractShare : 0.0;
    const double w31 = y == 31 ? 1.0 : 0.0;
    out.value = phi[0] * base + phi[1] * w0 + phi[2] * wa + phi[3] * w31;
    if constexpr (WithGrad) {
      out.dmu = phi[0] * t.dmu[y];
      out.ddelta = phi[0] * t.ddelta[y];
      out.dphi = {base, w0, wa, w31};
    }
    return;
  }
  double base = 0.0, dmu = 0.0, ddelta = 0.0;
  for (int ell = y; ell < kSupport; ++ell) {
    base += t.f[ell];
    if constexpr (WithGrad) {
      dmu += t.dmu[ell];
      ddelta += t.ddelta[ell];
    }
  }
  const double w0 = y == 0 ? 1.0 : 0.0;
  const double wa = kAttractTail[y] * kAttractShare;
  const double w31 = y <= 31 ? 1.0 : 0.0;
  out.value = phi[0] * base + phi[1] * w0 + phi[2] * wa + phi[3] * w31;
  if constexpr (WithGrad) {
    out.dmu = phi[0] * dmu;
    out.ddelta = phi[0] * ddelta;
    out.dphi = {base, w0, wa, w31};
  }
}

// Inputs of one evaluation, in whichever coding the design matrix uses.
struct EvalInputs {
  const Eigen::MatrixXd* x = nullptr;
  Eigen::VectorXd eta_base;  // x * beta
  Eigen::VectorXd alpha;
  double delta = 1.0;
  std::array<double, 4> phi{};
  Eigen::VectorXd log_pi;
  std::array<double, kCards> inv_delta{};
};

// Per-chunk accumulators; beta gradients are formed afterwards as x' h.
struct ChunkAccum {
  double loglik = 0.0;
  Eigen::VectorXd d_alpha;
  double d_delta = 0.0;
  std::array<double, 4> d_phi{};
  Eigen::VectorXd d_logpi;  // d/d log pi_s = posterior weight
  std::size_t floored = 0;
  std::string nonfinite_child;

  void reset(int segments) {
    loglik = 0.0;
    d_alpha = Eigen::VectorXd::Zero(segments);
    d_delta = 0.0;
    d_phi = {};
    d_logpi = Eigen::VectorXd::Zero(segments);
    floored = 0;
    nonfinite_child.clear();
  }

  void add(const ChunkAccum& o) {
    loglik += o.loglik;
    d_alpha += o.d_alpha;
    d_delta += o.d_delta;
    for (int m = 0; m < 4; ++m) d_phi[m] += o.d_phi[m];
    d_logpi += o.d_logpi;
    floored += o.floored;
    if (nonfinite_child.empty()) nonfinite_child = o.nonfinite_child;
  }
};

template <bool WithGrad>
void eval_children(const FitData& data, const EvalInputs& in, std::size_t c0, std::size_t c1, ChunkAccum& acc,
                   double* h_rows, Eigen::MatrixXd* joint) {
  const int segments = static_cast<int>(in.alpha.size());
  acc.reset(segments);
  BaseTableWithGrad table;
  TrialTerm term;
  std::vector<double> log_joint(segments);
  std::vector<double> g_alpha(segments), g_delta(segments);
  std::vector<std::array<double, 4>> g_phi(segments);
  std::vector<double> g_eta;  // per (trial, segment)

  for (std::size_t i = c0; i < c1; ++i) {
    const std::size_t r0 = data.child_begin[i], r1 = data.child_begin[i + 1];
    const std::size_t nt = r1 - r0;
    if constexpr (WithGrad) g_eta.assign(nt * segments, 0.0);
    for (int s = 0; s < segments; ++s) {
      double lj = in.log_pi(s);
      double ga = 0.0, gd = 0.0;
      std::array<double, 4> gp{};
      for (std::size_t r = r0; r < r1; ++r) {
        const double eta = in.alpha(s) + in.eta_base(static_cast<Eigen::Index>(r));
        const double mu = std::max(softplus(eta), 1e-300);
        if constexpr (WithGrad) {
          base_table_with_grad(mu, in.delta, in.inv_delta, table);
        } else {
          base_table_values(mu, in.delta, table.f);
        }
        trial_term<WithGrad>(data.y[r], data.censored[r] != 0, in.phi, table, term);
        double value = term.value;
        bool floored = false;
        if (!(value >= kThetaFloor)) {
          if (std::isnan(value) && acc.nonfinite_child.empty()) acc.nonfinite_child = data.child_ids[i];
          value = kThetaFloor;
          floored = true;
          ++acc.floored;
        }
        lj += std::log(value);
        if constexpr (WithGrad) {
          if (!floored) {
            const double inv = 1.0 / value;
            const double ge = term.dmu * softplus_deriv(eta) * inv;
            g_eta[(r - r0) * segments + s] = ge;
            ga += ge;
            gd += term.ddelta * inv;
            for (int m = 0; m < 4; ++m) gp[m] += term.dphi[m] * inv;
          }
        }
      }
      log_joint[s] = lj;
      if constexpr (WithGrad) {
        g_alpha[s] = ga;
        g_delta[s] = gd;
        g_phi[s] = gp;
      }
    }
    const double top = *std::max_element(log_joint.begin(), log_joint.end());
    double sum = 0.0;
    for (int s = 0; s < segments; ++s) sum += std::exp(log_joint[s] - top);
    const double li = top + std::log(sum);
    if (!std::isfinite(li) && acc.nonfinite_child.empty()) acc.nonfinite_child = data.child_ids[i];
    acc.loglik += li;
    if (joint) {
      for (int s = 0; s < segments; ++s) (*joint)(static_cast<Eigen::Index>(i), s) = log_joint[s];
    }
    if constexpr (WithGrad) {
      for (int s = 0; s < segments; ++s) {
        const double w = std::exp(log_joint[s] - li);
        acc.d_logpi(s) += w;
        acc.d_alpha(s) += w * g_alpha[s];
        acc.d_delta += w * g_delta[s];
        for (int m = 0; m < 4; ++m) acc.d_phi[m] += w * g_phi[s][m];
        for (std::size_t t = 0; t < nt; ++t) h_rows[r0 + t] += w * g_eta[t * segments + s];
      }
    }
  }
}

// Pairwise combination in chunk order.
ChunkAccum combine(std::vector<ChunkAccum>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return parts[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  ChunkAccum left = combine(parts, lo, mid);
  left.add(combine(parts, mid, hi));
  return left;
}

template <bool WithGrad>
ChunkAccum evaluate(const FitData& data, const EvalInputs& in, int threads, Eigen::VectorXd* h,
                    Eigen::MatrixXd* joint) {
  const std::size_t n = data.n_children();
  const std::size_t n_chunks = std::max<std::size_t>(1, (n + kChunkChildren - 1) / kChunkChildren);
  std::vector<ChunkAccum> parts(n_chunks);
  if (h) h->setZero(static_cast<Eigen::Index>(data.n_rows()));
  double* h_rows = h ? h->data() : nullptr;

  auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t c = worker; c < n_chunks; c += stride) {
      const std::size_t c0 = c * kChunkChildren;
      const std::size_t c1 = std::min(n, c0 + kChunkChildren);
      eval_children<WithGrad>(data, in, c0, c1, parts[c], h_rows, joint);
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), n_chunks);
  if (workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }
  ChunkAccum total = combine(parts, 0, n_chunks);
  if (!total.nonfinite_child.empty()) {
    fail(ErrorKind::numerical, "non-finite likelihood contribution for child " + total.nonfinite_child);
  }
  return total;
}

EvalInputs inputs_from_model(const Eigen::MatrixXd& x, const ModelParams& p) {
  EvalInputs in;
  in.x = &x;
  in.eta_base = x * p.beta;
  in.alpha = p.alpha;
  in.delta = p.delta;
  in.phi = p.phi.phi;
  in.log_pi = p.pi.array().log();
  in.inv_delta = inverse_delta_offsets(p.delta);
  return in;
}

}  // namespace

double theta(int y, bool censored, const InflatedNB& d) {
  if (y < 0 || y > kCards) fail(ErrorKind::out_of_support, "outcome outside {0..32}");
  if (censored && y == 0) fail(ErrorKind::invalid_parameter, "a censored trial cannot have zero cards");
  if (!censored) return inflated_pmf(y, d);
  return 1.0 - inflated_cdf(y - 1, d);
}

FitData make_fit_data(const Dataset& data, const DesignMatrix& design) {
  FitData fd;
  fd.x_full = design.x;
  fd.x_free = design.free_columns();
  fd.child_begin = design.child_begin;
  for (const auto& c : data.children) fd.child_ids.push_back(c.child_id);
  for (std::size_t r = 0; r < design.n_rows(); ++r) {
    const TrialRecord& t = data.trials[design.trial_row[r]];
    if (t.y < 0 || t.y > kCards) fail(ErrorKind::data, "observed cards outside {0..32} for child " + t.child_id);
    if (t.censored && t.y == 0) fail(ErrorKind::data, "censored trial with zero cards for child " + t.child_id);
    fd.y.push_back(t.y);
    fd.censored.push_back(t.censored ? 1 : 0);
    fd.setting.push_back(t.setting);
  }
  return fd;
}

double person_loglik(std::span<const int> y, std::span<const unsigned char> censored,
                     const Eigen::Ref<const Eigen::MatrixXd>& rows, const ModelParams& params, EvalStats* stats) {
  if (y.empty()) fail(ErrorKind::data, "a child needs at least one trial");
  if (y.size() != censored.size() || static_cast<Eigen::Index>(y.size()) != rows.rows()) {
    fail(ErrorKind::data, "trials and design rows are not aligned");
  }
  FitData one;
  one.x_full = rows;
  one.y.assign(y.begin(), y.end());
  one.censored.assign(censored.begin(), censored.end());
  one.child_begin = {0, y.size()};
  one.child_ids = {"<child>"};
  const EvalInputs in = inputs_from_model(one.x_full, params);
  const ChunkAccum acc = evaluate<false>(one, in, 1, nullptr, nullptr);
  if (stats) stats->floored_terms += acc.floored;
  return acc.loglik;
}

Eigen::MatrixXd segment_log_joint(const FitData& data, const ModelParams& params, EvalStats* stats) {
  const EvalInputs in = inputs_from_model(data.x_full, params);
  Eigen::MatrixXd joint(static_cast<Eigen::Index>(data.n_children()), params.segments());
  const ChunkAccum acc = evaluate<false>(data, in, 1, nullptr, &joint);
  if (stats) stats->floored_terms += acc.floored;
  return joint;
}

Likelihood::Likelihood(const FitData& data, ParamLayout layout, int threads)
    : data_(&data), layout_(std::move(layout)), threads_(std::max(1, threads)) {
  if (data.n_rows() == 0 || data.n_children() == 0) fail(ErrorKind::data, "empty dataset");
  if (data.x_free.cols() != layout_.blocks.n_free) {
    fail(ErrorKind::internal, "design does not match the parameter layout");
  }
}

namespace {

EvalInputs inputs_from_free(const FitData& data, const ParamLayout& layout, const Eigen::VectorXd& theta_u) {
  const FreeParams f = FreeParams::from_flat(theta_u, layout);
  const int s = layout.segments;
  EvalInputs in;
  in.x = &data.x_free;
  in.alpha = f.gamma_u.head(s);
  in.eta_base = data.x_free * f.gamma_u.tail(layout.blocks.n_free);
  in.delta = std::exp(f.log_delta);
  const Eigen::VectorXd phi = softmax_with_pivot(Eigen::Vector3d(f.tau[0], f.tau[1], f.tau[2]));
  for (int m = 0; m < 4; ++m) in.phi[m] = phi(m);
  in.log_pi = softmax_with_pivot(f.sigma).array().log();
  in.inv_delta = inverse_delta_offsets(in.delta);
  if (!std::isfinite(in.delta) || !(in.delta > 0.0)) fail(ErrorKind::numerical, "dispersion left the finite range");
  return in;
}

}  // namespace

double Likelihood::value(const Eigen::VectorXd& theta_u, EvalStats* stats) const {
  const EvalInputs in = inputs_from_free(*data_, layout_, theta_u);
  const ChunkAccum acc = evaluate<false>(*data_, in, threads_, nullptr, nullptr);
  if (stats) stats->floored_terms += acc.floored;
  return -acc.loglik;
}

double Likelihood::value_and_gradient(const Eigen::VectorXd& theta_u, Eigen::VectorXd& grad,
                                      EvalStats* stats) const {
  const EvalInputs in = inputs_from_free(*data_, layout_, theta_u);
  Eigen::VectorXd h;
  const ChunkAccum acc = evaluate<true>(*data_, in, threads_, &h, nullptr);
  if (stats) stats->floored_terms += acc.floored;

  const int s = layout_.segments;
  const int nb = layout_.blocks.n_free;
  grad.resize(layout_.n_free());
  grad.head(s) = acc.d_alpha;
  grad.segment(s, nb) = data_->x_free.transpose() * h;
  grad(s + nb) = acc.d_delta * in.delta;
  // Chain through the softmax: d/d tau_j = sum_m d/d phi_m * phi_m (1[m=j] - phi_j).
  double phi_dot = 0.0;
  for (int m = 0; m < 4; ++m) phi_dot += in.phi[m] * acc.d_phi[m];
  for (int j = 0; j < 3; ++j) grad(s + nb + 1 + j) = in.phi[j] * (acc.d_phi[j] - phi_dot);
  // d/d sigma_j = sum_i (w_ij - pi_j).
  const double n = static_cast<double>(data_->n_children());
  for (int j = 0; j < s - 1; ++j) grad(s + nb + 4 + j) = acc.d_logpi(j) - n * std::exp(in.log_pi(j));
  grad = -grad;
  return -acc.loglik;
}

Eigen::VectorXd Likelihood::gradient_fd(const Eigen::VectorXd& theta_u, double rel_step) const {
  Eigen::VectorXd g(theta_u.size());
  Eigen::VectorXd probe = theta_u;
  for (Eigen::Index k = 0; k < theta_u.size(); ++k) {
    const double h = rel_step * std::max(1.0, std::abs(theta_u(k)));
    probe(k) = theta_u(k) + h;
    const double up = value(probe);
    probe(k) = theta_u(k) - h;
    const double down = value(probe);
    probe(k) = theta_u(k);
    g(k) = (up - down) / (2.0 * h);
  }
  return g;
}

double Likelihood::log_omega_constant() const {
  double acc = 0.0;
  for (std::size_t r = 0; r < data_->n_rows(); ++r) {
    const double w = omega(data_->y[r], data_->censored[r] != 0, data_->y[r], data_->setting[r]);
    acc += std::log(std::max(w, kThetaFloor));
  }
  return acc;
}

double total_negloglik(const Eigen::VectorXd& theta_u, const FitData& data, const ParamLayout& layout,
                       bool include_omega, int threads) {
  const Likelihood lik(data, layout, threads);
  double v = lik.value(theta_u);
  if (include_omega) v -= lik.log_omega_constant();
  return v;
}

}  // namespace cmm
