#pragma once

#include <cstdint>
#include <vector>

#include "vcboot/fit.hpp"
#include "vcboot/likelihood.hpp"
#include "vcboot/types.hpp"

namespace vcboot {

// Entry-wise thresholding applied to the untested part of lambda before it
// seeds the bootstrap generator.  Zeroing nuisance scales that are small on
// the estimation-noise scale keeps the generator away from the interior
// bias that plain parametric resampling suffers at the boundary.
struct ShrinkPolicy {
  // Threshold; entries with magnitude <= c_n are zeroed.  0 disables
  // shrinkage (plain parametric bootstrap).
  double c_n = 0.0;
  // Whether off-diagonal entries are thresholded too (diagonal scales
  // always are).
  bool include_offdiagonal = true;
  // Also zero fixed effects with |beta_k| <= c_n.  Off by default: fixed
  // effects are estimated at the regular rate and rarely sit near zero.
  bool shrink_fixed_effects = false;
  // Seed the generator from the unrestricted fit instead of the null fit.
  // The null fit is the default: it is already a null-space point, and both
  // choices are consistent for this purpose.
  bool seed_from_unrestricted = false;
};

// Default threshold schedule: decays to zero slowly enough that
// N^(1/4) * c(N) still grows, which is what separates true zeros from
// boundary-rate estimation noise.
double default_shrink(int n_individuals);

// Bootstrap generator parameter: tested rows of lambda forced to zero,
// untested block refolded to its canonical triangular factor and
// thresholded entry by entry until a fixed point is reached.  beta and
// sigma2 pass through (beta optionally thresholded too).
Theta shrink_parameter(const Theta& theta_hat, const TestSpec& spec,
                       const ShrinkPolicy& policy);

// Likelihood ratio statistic, clamped at zero.
double lrt_statistic(double loglik_full, double loglik_null);

// Fraction of bootstrap statistics strictly above the observed one.
// NaN entries (failed replicates) are skipped.
double bootstrap_pvalue(double lrt_obs, const std::vector<double>& lrt_star);

// Reference p-value for testing a single variance component: the statistic
// is asymptotically a 50:50 mixture of a point mass at zero and chi-squared
// with one degree of freedom.
double asymptotic_pvalue_single(double lrt_obs);

// Full and null fits with the nesting repair: when the null fit beats the
// full fit (a multi-start artifact), the full fit is rerun from the null
// solution so the likelihood ratio is never negative by accident.
struct FitPair {
  FitResult full;
  FitResult null;
  double lrt = 0.0;
};

FitPair fit_lrt_pair(const ModelSpec& model, const Dataset& data,
                     const TestSpec& spec, const QuadratureConfig& quad,
                     const FitOptions& opts);

struct BootstrapOptions {
  int n_replicates = 200;
  std::uint64_t seed = 0;
  int workers = 1;
  // Refits of resampled data start from the generator parameter with a
  // single simplex start; set to 0 to reuse the caller's n_starts.
  int replicate_starts = 1;
  // Result is flagged unreliable when more than this fraction of
  // replicates fails to refit.
  double max_fail_fraction = 0.05;
};

struct BootstrapResult {
  FitResult fit_full;
  FitResult fit_null;
  double lrt_obs = 0.0;
  Theta theta_star;                // shrunk generator parameter
  std::vector<double> lrt_star;    // length B; NaN where a replicate failed
  double p_boot = 1.0;
  int b_failed = 0;
  bool reliable = true;
};

// The shrunken parametric bootstrap test: fit, shrink, resample B datasets
// on the observed designs, refit each, and compare likelihood ratios.
// Replicate b is driven by a seed derived from (seed, b), so results do not
// depend on the worker count.
BootstrapResult bootstrap_test(const ModelSpec& model, const Dataset& data,
                               const TestSpec& spec,
                               const QuadratureConfig& quad,
                               const FitOptions& fit_opts,
                               const ShrinkPolicy& policy,
                               const BootstrapOptions& boot);

// Same test on fits the caller already has, so several policies can share
// one pair of observed fits.
BootstrapResult bootstrap_test(const ModelSpec& model, const Dataset& data,
                               const TestSpec& spec,
                               const QuadratureConfig& quad,
                               const FitOptions& fit_opts,
                               const ShrinkPolicy& policy,
                               const BootstrapOptions& boot,
                               const FitPair& observed);

}  // namespace vcboot
