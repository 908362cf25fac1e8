#include "vcboot/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vcboot/parallel.hpp"
#include "vcboot/rng.hpp"

namespace vcboot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Canonical triangular factor of the covariance spanned by the given rows:
// psd_cholesky of the row block's self-product.  For a lambda that is
// diagonal, or whose tested rows trail the untested ones, this is just the
// untested block itself.
Eigen::MatrixXd refold_block(const Eigen::MatrixXd& lambda,
                             const std::vector<int>& rows) {
  const int m = static_cast<int>(rows.size());
  Eigen::MatrixXd block(m, lambda.cols());
  for (int a = 0; a < m; ++a) block.row(a) = lambda.row(rows[a]);
  return psd_cholesky(block * block.transpose());
}

bool threshold_entries(Eigen::MatrixXd& L, double c_n,
                       bool include_offdiagonal) {
  bool changed = false;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      if (i != j && !include_offdiagonal) continue;
      if (L(i, j) != 0.0 && std::abs(L(i, j)) <= c_n) {
        L(i, j) = 0.0;
        changed = true;
      }
    }
  }
  return changed;
}

}  // namespace

double default_shrink(int n_individuals) {
  if (n_individuals < 1) {
    throw ConfigError("default_shrink: need at least one individual");
  }
  return 0.5 * std::pow(static_cast<double>(n_individuals), -0.2);
}

Theta shrink_parameter(const Theta& theta_hat, const TestSpec& spec,
                       const ShrinkPolicy& policy) {
  validate(theta_hat);
  const int p = theta_hat.n_effects();
  const std::vector<int> untested = untested_index(spec, p);
  if (policy.c_n < 0.0 || !std::isfinite(policy.c_n)) {
    throw ConfigError("shrink_parameter: c_n must be finite and nonnegative");
  }

  Theta star = theta_hat;
  star.lambda.setZero();
  if (!untested.empty()) {
    // Threshold, re-canonicalize, and repeat: re-folding after a zeroing
    // can move mass between entries, so one pass is not always a fixed
    // point.  Each round either zeroes another entry or stops.
    Eigen::MatrixXd L = refold_block(theta_hat.lambda, untested);
    while (threshold_entries(L, policy.c_n, policy.include_offdiagonal)) {
      L = psd_cholesky(L * L.transpose());
    }
    for (std::size_t a = 0; a < untested.size(); ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        star.lambda(untested[a], untested[b]) = L(a, b);
      }
    }
  }
  if (policy.shrink_fixed_effects) {
    for (Eigen::Index k = 0; k < star.beta.size(); ++k) {
      if (std::abs(star.beta[k]) <= policy.c_n) star.beta[k] = 0.0;
    }
  }
  validate(star);
  return star;
}

double lrt_statistic(double loglik_full, double loglik_null) {
  if (!std::isfinite(loglik_full) || !std::isfinite(loglik_null)) {
    throw ConfigError("lrt_statistic: non-finite log-likelihood");
  }
  return std::max(0.0, 2.0 * (loglik_full - loglik_null));
}

double bootstrap_pvalue(double lrt_obs, const std::vector<double>& lrt_star) {
  if (!(lrt_obs >= 0.0)) {
    throw ConfigError("bootstrap_pvalue: observed statistic must be >= 0");
  }
  long n_valid = 0;
  long n_above = 0;
  for (double v : lrt_star) {
    if (std::isnan(v)) continue;
    ++n_valid;
    if (v > lrt_obs) ++n_above;
  }
  if (n_valid == 0) {
    throw ConfigError("bootstrap_pvalue: no valid bootstrap statistics");
  }
  return static_cast<double>(n_above) / static_cast<double>(n_valid);
}

double asymptotic_pvalue_single(double lrt_obs) {
  if (!(lrt_obs >= 0.0)) {
    throw ConfigError(
        "asymptotic_pvalue_single: statistic must be >= 0");
  }
  if (lrt_obs == 0.0) return 1.0;
  // P(mixture > t) = 0.5 * P(chi2_1 > t) = 0.5 * erfc(sqrt(t / 2)).
  return 0.5 * std::erfc(std::sqrt(0.5 * lrt_obs));
}

FitPair fit_lrt_pair(const ModelSpec& model, const Dataset& data,
                     const TestSpec& spec, const QuadratureConfig& quad,
                     const FitOptions& opts) {
  validate(spec, model.n_effects);
  FitPair pair;
  pair.full = mle_full(model, data, quad, opts);
  FitOptions null_opts = opts;
  if (!null_opts.init) {
    // The projected full solution is usually an excellent null start; the
    // remaining starts still jitter around it.
    null_opts.init = project_to_null(pair.full.theta_hat, spec);
  }
  pair.null = mle_null(model, data, spec, quad, null_opts);
  if (pair.null.loglik > pair.full.loglik) {
    // The null optimum is a feasible full-space point, so restart the full
    // fit there and keep the better of the two.
    FitOptions retry = opts;
    retry.init = pair.null.theta_hat;
    retry.n_starts = 1;
    const FitResult rerun = mle_full(model, data, quad, retry);
    if (rerun.loglik > pair.full.loglik) pair.full = rerun;
  }
  pair.lrt = lrt_statistic(pair.full.loglik, pair.null.loglik);
  return pair;
}

BootstrapResult bootstrap_test(const ModelSpec& model, const Dataset& data,
                               const TestSpec& spec,
                               const QuadratureConfig& quad,
                               const FitOptions& fit_opts,
                               const ShrinkPolicy& policy,
                               const BootstrapOptions& boot) {
  const FitPair observed = fit_lrt_pair(model, data, spec, quad, fit_opts);
  return bootstrap_test(model, data, spec, quad, fit_opts, policy, boot,
                        observed);
}

BootstrapResult bootstrap_test(const ModelSpec& model, const Dataset& data,
                               const TestSpec& spec,
                               const QuadratureConfig& quad,
                               const FitOptions& fit_opts,
                               const ShrinkPolicy& policy,
                               const BootstrapOptions& boot,
                               const FitPair& observed) {
  if (boot.n_replicates < 1) {
    throw ConfigError("bootstrap_test: need at least one replicate");
  }
  BootstrapResult result;
  result.fit_full = observed.full;
  result.fit_null = observed.null;
  result.lrt_obs = observed.lrt;
  const Theta& seed_theta = policy.seed_from_unrestricted
                                ? observed.full.theta_hat
                                : observed.null.theta_hat;
  result.theta_star = shrink_parameter(seed_theta, spec, policy);

  const std::vector<Eigen::MatrixXd> designs = designs_of(data);
  result.lrt_star.assign(boot.n_replicates, kNaN);

  FitOptions replicate_opts = fit_opts;
  replicate_opts.init = result.theta_star;
  replicate_opts.init_step = std::min(fit_opts.init_step, 0.05);
  if (boot.replicate_starts > 0) {
    replicate_opts.n_starts = boot.replicate_starts;
  }

  parallel_for(boot.n_replicates, boot.workers, [&](int b) {
    const std::uint64_t seed_b = mix_seed(boot.seed, 0xB007u, b);
    std::mt19937_64 rng = make_engine(seed_b);
    const Dataset resampled =
        simulate_dataset(model, result.theta_star, designs, rng);
    FitOptions opts_b = replicate_opts;
    opts_b.seed = mix_seed(seed_b, 0xF17u);
    try {
      const FitPair pair = fit_lrt_pair(model, resampled, spec, quad, opts_b);
      result.lrt_star[b] = pair.lrt;
    } catch (const EstimationError&) {
      // Leave NaN; counted below.
    } catch (const EvalError&) {
    }
  });

  result.b_failed = static_cast<int>(
      std::count_if(result.lrt_star.begin(), result.lrt_star.end(),
                    [](double v) { return std::isnan(v); }));
  if (result.b_failed == boot.n_replicates) {
    throw EstimationError("bootstrap_test: every replicate refit failed");
  }
  result.p_boot = bootstrap_pvalue(result.lrt_obs, result.lrt_star);
  result.reliable =
      result.b_failed <=
      boot.max_fail_fraction * static_cast<double>(boot.n_replicates);
  return result;
}

}  // namespace vcboot
