#include "vcboot/gauss_hermite.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>

#include "vcboot/types.hpp"

namespace vcboot {

namespace {

GaussHermiteRule compute_rule(int n) {
  // Jacobi matrix of the Hermite recurrence: zero diagonal, off-diagonal
  // sqrt(k/2).  Its eigenvalues are the nodes; the squared first components
  // of the normalized eigenvectors, scaled by mu0 = sqrt(pi), are the
  // weights.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double off = std::sqrt(0.5 * k);
    jacobi(k, k - 1) = off;
    jacobi(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  if (eig.info() != Eigen::Success) {
    throw EvalError("gauss_hermite: eigen decomposition failed");
  }
  GaussHermiteRule rule;
  rule.nodes = eig.eigenvalues();
  const double mu0 = std::sqrt(M_PI);
  rule.weights = mu0 * eig.eigenvectors().row(0).transpose().array().square();
  rule.log_weights = rule.weights.array().log();
  // Eigenvalues come back sorted, and symmetry pairs nodes as -t, t; force
  // the midpoint of an odd rule to exactly zero.
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(int n) {
  if (n < 1) throw ConfigError("gauss_hermite: need at least one node");
  static std::mutex cache_mutex;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, compute_rule(n)).first;
  }
  return it->second;
}

}  // namespace vcboot
