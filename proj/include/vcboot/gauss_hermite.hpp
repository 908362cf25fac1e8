#pragma once

#include <Eigen/Dense>

namespace vcboot {

// Gauss-Hermite rule for the physicists' weight exp(-t^2):
//   integral f(t) exp(-t^2) dt  ~  sum_k weights[k] * f(nodes[k])
// Nodes are sorted ascending; weights are positive and sum to sqrt(pi).
struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
  Eigen::VectorXd log_weights;
};

// Computes the n-point rule by the Golub-Welsch eigenvalue method.  Cached
// internally, so repeated calls with the same n are cheap.  Throws
// ConfigError for n < 1.
const GaussHermiteRule& gauss_hermite(int n);

}  // namespace vcboot
