#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "vcboot/types.hpp"

namespace vcboot {

// How marginal log-likelihood integrals are evaluated for models that are
// not linear in the random effects.  Linear models always use the closed
// Gaussian form regardless of these settings.
struct QuadratureConfig {
  // Gauss-Hermite nodes per active dimension; 1 with adaptive=true is the
  // Laplace approximation.
  int n_nodes = 9;
  // Center and scale the grid at the conditional mode (recommended).
  bool adaptive = true;
  // Plain Monte Carlo estimator instead of quadrature; mainly a cross-check.
  bool use_monte_carlo = false;
  int mc_draws = 20000;
  std::uint64_t mc_seed = 0xA5C349E1u;
  // Conditional-mode search controls.
  double mode_tol = 1e-8;
  int max_mode_iter = 60;
  // Refuse tensor grids beyond this many nodes instead of hanging.
  long max_tensor_nodes = 4000000;
};

void validate(const QuadratureConfig& quad);

// Reusable per-dataset state: warm starts for the conditional-mode search,
// one slot per individual.  Owned by a single fit; not shareable across
// threads.
// Per-dataset scratch that persists across loglik calls during a fit: the
// conditional modes warm-start the next mode search, and the design
// grouping for the closed form is computed once.  Reset (or drop) the cache
// when switching datasets.
struct LoglikCache {
  std::vector<Eigen::VectorXd> modes;
  std::vector<int> group_of;
  std::vector<int> group_rep;
  void reset() {
    modes.clear();
    group_of.clear();
    group_rep.clear();
  }
};

// Columns of lambda that carry any nonzero entry.  Random-effect dimensions
// outside this set integrate out analytically (their column contributes
// nothing to the mean), which is what keeps null fits cheap.
std::vector<int> active_effects(const Theta& theta);

// Marginal log-likelihood of the whole dataset under theta.
double loglik(const ModelSpec& model, const Dataset& data, const Theta& theta,
              const QuadratureConfig& quad, LoglikCache* cache = nullptr);

// Marginal log-likelihood of a single individual.
double individual_loglik(const ModelSpec& model, const Individual& ind,
                         const Theta& theta, const QuadratureConfig& quad);

// Draws a dataset from the model: one standard normal effect vector per
// individual, pushed through lambda and the mean, plus N(0, sigma2) noise.
// Consumes rng in a fixed order (effects first, then noise, individual by
// individual), so equal seeds give equal datasets.
Dataset simulate_dataset(const ModelSpec& model, const Theta& theta,
                         const std::vector<Eigen::MatrixXd>& designs,
                         std::mt19937_64& rng);

// Covariate matrices of an existing dataset, in order.
std::vector<Eigen::MatrixXd> designs_of(const Dataset& data);

}  // namespace vcboot
