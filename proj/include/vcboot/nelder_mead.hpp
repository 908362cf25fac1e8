#pragma once

#include <Eigen/Dense>

#include <functional>

namespace vcboot {

struct NelderMeadOptions {
  int max_evals = 4000;
  // Stop when the simplex collapses below these spreads.
  double x_tol = 1e-6;
  double f_tol = 1e-9;
  // Initial vertex displacement, relative to max(1, |x0_i|).
  double init_step = 0.1;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int n_evals = 0;
  bool converged = false;
};

// Nelder-Mead simplex minimization with box constraints enforced by
// clamping every candidate vertex.  f may return +inf (or NaN, treated as
// +inf) for infeasible points; x0 is clamped before use.
NelderMeadResult nelder_mead_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
    const Eigen::VectorXd& upper, const NelderMeadOptions& opts);

}  // namespace vcboot
