#include "cmm/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmm/error.hpp"

namespace cmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Probe {
  double a = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
  Eigen::VectorXd x;
  Eigen::VectorXd g;
};

class LineSearch {
 public:
  LineSearch(const GradObjective& f, const Eigen::VectorXd& x, double fx, const Eigen::VectorXd& p, double d0,
             const BfgsOptions& opts, int& evals)
      : f_(f), x_(x), fx_(fx), p_(p), d0_(d0), opts_(opts), evals_(evals) {}

  bool run(double a0, Probe& out) {
    Probe prev;
    prev.a = 0.0;
    prev.f = fx_;
    prev.d = d0_;
    double a = a0;
    for (int i = 0; i < opts_.max_line_search; ++i) {
      Probe cur = probe(a);
      if (!std::isfinite(cur.f)) {
        a = prev.a + 0.25 * (a - prev.a);
        continue;
      }
      if (cur.f > fx_ + opts_.c1 * a * d0_ || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur, out);
      if (std::abs(cur.d) <= -opts_.c2 * d0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.d >= 0.0) return zoom(cur, prev, out);
      prev = std::move(cur);
      a *= 2.0;
    }
    return accept_if_decrease(prev, out);
  }

 private:
  Probe probe(double a) {
    Probe pr;
    pr.a = a;
    pr.x = x_ + a * p_;
    pr.f = f_(pr.x, &pr.g);
    ++evals_;
    if (!std::isfinite(pr.f) || !pr.g.allFinite()) {
      pr.f = kInf;
      pr.d = 0.0;
    } else {
      pr.d = pr.g.dot(p_);
    }
    return pr;
  }

  bool accept_if_decrease(Probe& lo, Probe& out) {
    if (lo.a > 0.0 && lo.f < fx_) {
      out = std::move(lo);
      return true;
    }
    return false;
  }

  static double interpolate(const Probe& lo, const Probe& hi) {
    const double width = hi.a - lo.a;
    const double left = std::min(lo.a, hi.a) + 0.1 * std::abs(width);
    const double right = std::max(lo.a, hi.a) - 0.1 * std::abs(width);
    const double mid = 0.5 * (lo.a + hi.a);
    if (!std::isfinite(hi.f)) return mid;
    const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
    const double disc = d1 * d1 - lo.d * hi.d;
    if (!(disc >= 0.0)) return mid;
    const double d2 = std::copysign(std::sqrt(disc), width);
    const double denom = hi.d - lo.d + 2.0 * d2;
    if (denom == 0.0) return mid;
    const double a = hi.a - width * (hi.d + d2 - d1) / denom;
    if (!std::isfinite(a) || a < left || a > right) return mid;
    return a;
  }

  bool zoom(Probe lo, Probe hi, Probe& out) {
    for (int i = 0; i < opts_.max_line_search; ++i) {
      const double a = interpolate(lo, hi);
      if (std::abs(hi.a - lo.a) <= 1e-16 * std::max(1.0, std::abs(lo.a))) break;
      Probe cur = probe(a);
      if (cur.f > fx_ + opts_.c1 * a * d0_ || cur.f >= lo.f) {
        hi = std::move(cur);
        continue;
      }
      if (std::abs(cur.d) <= -opts_.c2 * d0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.d * (hi.a - lo.a) >= 0.0) hi = lo;
      lo = std::move(cur);
    }
    return accept_if_decrease(lo, out);
  }

  const GradObjective& f_;
  const Eigen::VectorXd& x_;
  double fx_;
  const Eigen::VectorXd& p_;
  double d0_;
  const BfgsOptions& opts_;
  int& evals_;
};

}  // namespace

std::string to_string(BfgsStop stop) {
  switch (stop) {
    case BfgsStop::reltol: return "reltol";
    case BfgsStop::small_gradient: return "small_gradient";
    case BfgsStop::line_search: return "line_search_failed";
    case BfgsStop::max_iters: return "max_iters";
  }
  return "unknown";
}

BfgsResult bfgs_minimize(const GradObjective& f, const Eigen::VectorXd& x0, const BfgsOptions& opts) {
  if (!(opts.reltol > 0.0)) fail(ErrorKind::config, "reltol must be positive");
  if (opts.max_iters < 0) fail(ErrorKind::config, "max_iters must be nonnegative");
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = x0;
  res.f = f(res.x, &res.grad);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !res.grad.allFinite()) {
    fail(ErrorKind::numerical, "objective is not finite at the starting point");
  }
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool h_is_identity = true;
  bool first = true;

  for (int it = 0; it < opts.max_iters; ++it) {
    if (res.grad.lpNorm<Eigen::Infinity>() <= 1e-12) {
      res.stop = BfgsStop::small_gradient;
      return res;
    }
    Eigen::VectorXd p = -h * res.grad;
    double d0 = res.grad.dot(p);
    if (!(d0 < 0.0)) {
      h.setIdentity();
      h_is_identity = true;
      p = -res.grad;
      d0 = res.grad.dot(p);
    }
    const double a0 = first ? std::min(1.0, 1.0 / res.grad.norm()) : 1.0;
    LineSearch ls(f, res.x, res.f, p, d0, opts, res.evaluations);
    Probe next;
    if (!ls.run(a0, next)) {
      if (h_is_identity) {
        res.stop = BfgsStop::line_search;
        return res;
      }
      h.setIdentity();
      h_is_identity = true;
      continue;
    }
    const Eigen::VectorXd s = next.x - res.x;
    const Eigen::VectorXd y = next.g - res.grad;
    const double f_prev = res.f;
    res.x = std::move(next.x);
    res.f = next.f;
    res.grad = std::move(next.g);
    res.iterations = it + 1;

    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      if (first) h *= sy / y.squaredNorm();
      const Eigen::VectorXd hy = h * y;
      const double yhy = y.dot(hy);
      h += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) - (hy * s.transpose() + s * hy.transpose()) / sy;
      h_is_identity = false;
    }
    first = false;

    if (f_prev - res.f < opts.reltol * (std::abs(res.f) + opts.reltol)) {
      res.stop = BfgsStop::reltol;
      return res;
    }
  }
  res.stop = BfgsStop::max_iters;
  return res;
}

HessianResult numerical_hessian(const PlainObjective& f, const Eigen::VectorXd& x, double rel_step,
                                double abs_step) {
  const Eigen::Index d = x.size();
  HessianResult out;
  out.h.resize(d, d);
  Eigen::VectorXd step(d);
  for (Eigen::Index k = 0; k < d; ++k) step(k) = std::max(abs_step, rel_step * std::abs(x(k)));

  Eigen::VectorXd probe = x;
  auto eval = [&]() {
    ++out.evaluations;
    return f(probe);
  };
  const double f0 = eval();
  for (Eigen::Index k = 0; k < d; ++k) {
    const double h = step(k);
    probe(k) = x(k) + h;
    const double p1 = eval();
    probe(k) = x(k) - h;
    const double m1 = eval();
    probe(k) = x(k) + 2.0 * h;
    const double p2 = eval();
    probe(k) = x(k) - 2.0 * h;
    const double m2 = eval();
    probe(k) = x(k);
    out.h(k, k) = (-p2 + 16.0 * p1 - 30.0 * f0 + 16.0 * m1 - m2) / (12.0 * h * h);
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index k = j + 1; k < d; ++k) {
      const double hj = step(j), hk = step(k);
      auto at = [&](double sj, double sk) {
        probe(j) = x(j) + sj * hj;
        probe(k) = x(k) + sk * hk;
        const double v = eval();
        probe(j) = x(j);
        probe(k) = x(k);
        return v;
      };
      const double pp = at(1, 1), pm = at(1, -1), mp = at(-1, 1), mm = at(-1, -1);
      out.h(j, k) = out.h(k, j) = (pp - pm - mp + mm) / (4.0 * hj * hk);
    }
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index k = 0; k < d; ++k) {
      if (!std::isfinite(out.h(j, k))) {
        fail(ErrorKind::numerical, "non-finite Hessian entry at (" + std::to_string(j) + ", " + std::to_string(k) + ")");
      }
    }
  }
  return out;
}

}  // namespace cmm
