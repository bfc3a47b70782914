#pragma once

// Quasi-Newton minimization and finite-difference Hessians.

#include <Eigen/Dense>
#include <functional>
#include <string>

namespace cmm {

/// Returns f(x); fills `grad` when it is non-null.
using GradObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;
using PlainObjective = std::function<double(const Eigen::VectorXd& x)>;

struct BfgsOptions {
  double reltol = 1e-10;
  int max_iters = 1000;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search = 40;
};

enum class BfgsStop { reltol, small_gradient, line_search, max_iters };

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  BfgsStop stop = BfgsStop::max_iters;

  /// Stopped on the relative-decrease rule or a vanishing gradient.
  bool converged() const { return stop == BfgsStop::reltol || stop == BfgsStop::small_gradient; }
};

std::string to_string(BfgsStop stop);

/// BFGS on the inverse Hessian with a strong-Wolfe line search. Stops when
/// f_prev - f < reltol * (|f| + reltol). Accepted iterates never increase f.
BfgsResult bfgs_minimize(const GradObjective& f, const Eigen::VectorXd& x0, const BfgsOptions& opts = {});

struct HessianResult {
  Eigen::MatrixXd h;
  int evaluations = 0;
};

/// Central second differences with step max(abs_step, rel_step * |x_k|).
/// Diagonal entries use the five-point stencil, off-diagonal entries the
/// four-point cross stencil: 2d^2 + 2d + 1 evaluations in total. Symmetric.
HessianResult numerical_hessian(const PlainObjective& f, const Eigen::VectorXd& x, double rel_step = 1e-4,
                                double abs_step = 1e-4);

}  // namespace cmm
