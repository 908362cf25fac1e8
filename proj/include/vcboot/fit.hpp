#pragma once

#include <cstdint>
#include <optional>

#include "vcboot/likelihood.hpp"
#include "vcboot/types.hpp"

namespace vcboot {

// Shape of the optimized lambda factor.  Diagonal treats the random effects
// as independent (one scale per effect); lower_triangular frees the whole
// triangle and thus an arbitrary covariance.
enum class LambdaStructure { diagonal, lower_triangular };

struct FitOptions {
  LambdaStructure structure = LambdaStructure::diagonal;
  // Multi-start simplex search: start 0 is the method-of-moments (or given)
  // start, the rest are jittered copies.
  int n_starts = 3;
  double start_jitter = 0.5;
  std::uint64_t seed = 0;
  int max_evals = 4000;
  double x_tol = 1e-6;
  double f_tol = 1e-9;
  // Initial simplex displacement, relative to the coordinate scale.  Warm
  // restarts near a known optimum work best with a smaller value.
  double init_step = 0.1;
  // Box for the free parameters.
  double beta_bound = 1e6;
  double lambda_bound = 1e4;
  double sigma2_cap = 1e8;
  // Lambda entries below this magnitude are snapped to exact zero, and
  // zeroing whole effect rows is attempted when it costs no likelihood.
  double zero_tol = 1e-8;
  bool polish_boundary = true;
  // Rerun the simplex once more from the winner with a small initial step.
  // Worth its cost on observed data; simulation refits can skip it.
  bool tight_polish = true;
  // Explicit starting point (replaces the method-of-moments start).
  std::optional<Theta> init;
};

struct FitResult {
  Theta theta_hat;
  double loglik = 0.0;
  bool converged = false;
  int n_evals = 0;
  int restarts_used = 0;
};

// Maximum marginal likelihood over the full parameter space.
FitResult mle_full(const ModelSpec& model, const Dataset& data,
                   const QuadratureConfig& quad, const FitOptions& opts);

// Maximum over the null space: the tested rows of lambda are pinned to
// zero and never enter the search.
FitResult mle_null(const ModelSpec& model, const Dataset& data,
                   const TestSpec& spec, const QuadratureConfig& quad,
                   const FitOptions& opts);

}  // namespace vcboot
