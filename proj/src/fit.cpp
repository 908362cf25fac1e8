#include "vcboot/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "vcboot/nelder_mead.hpp"
#include "vcboot/rng.hpp"

namespace vcboot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Parameter vector layout
// ---------------------------------------------------------------------------

// Free coordinates are [beta..., lambda entries..., sigma2].  Frozen lambda
// rows never appear, so null-space fits stay in the null space by
// construction.
struct ParamLayout {
  int n_fixed = 0;
  int n_effects = 0;
  std::vector<std::pair<int, int>> lambda_entries;

  int size() const {
    return n_fixed + static_cast<int>(lambda_entries.size()) + 1;
  }

  Eigen::VectorXd pack(const Theta& theta) const {
    Eigen::VectorXd x(size());
    x.head(n_fixed) = theta.beta;
    for (std::size_t e = 0; e < lambda_entries.size(); ++e) {
      const auto [i, j] = lambda_entries[e];
      x[n_fixed + static_cast<int>(e)] = theta.lambda(i, j);
    }
    x[size() - 1] = theta.sigma2;
    return x;
  }

  Theta unpack(const Eigen::VectorXd& x) const {
    Theta theta;
    theta.beta = x.head(n_fixed);
    theta.lambda = Eigen::MatrixXd::Zero(n_effects, n_effects);
    for (std::size_t e = 0; e < lambda_entries.size(); ++e) {
      const auto [i, j] = lambda_entries[e];
      theta.lambda(i, j) = x[n_fixed + static_cast<int>(e)];
    }
    theta.sigma2 = x[size() - 1];
    return theta;
  }

  void bounds(const FitOptions& opts, Eigen::VectorXd& lower,
              Eigen::VectorXd& upper) const {
    lower.resize(size());
    upper.resize(size());
    lower.head(n_fixed).setConstant(-opts.beta_bound);
    upper.head(n_fixed).setConstant(opts.beta_bound);
    for (std::size_t e = 0; e < lambda_entries.size(); ++e) {
      const auto [i, j] = lambda_entries[e];
      const int k = n_fixed + static_cast<int>(e);
      lower[k] = i == j ? 0.0 : -opts.lambda_bound;
      upper[k] = opts.lambda_bound;
    }
    lower[size() - 1] = kSigma2Floor;
    upper[size() - 1] = opts.sigma2_cap;
  }
};

ParamLayout make_layout(const ModelSpec& model, const FitOptions& opts,
                        const std::vector<int>& frozen_rows) {
  ParamLayout layout;
  layout.n_fixed = model.n_fixed;
  layout.n_effects = model.n_effects;
  for (int i = 0; i < model.n_effects; ++i) {
    if (std::binary_search(frozen_rows.begin(), frozen_rows.end(), i)) {
      continue;
    }
    if (opts.structure == LambdaStructure::diagonal) {
      layout.lambda_entries.emplace_back(i, i);
    } else {
      for (int j = 0; j <= i; ++j) layout.lambda_entries.emplace_back(i, j);
    }
  }
  return layout;
}

// ---------------------------------------------------------------------------
// Starting values
// ---------------------------------------------------------------------------

Eigen::VectorXd probe_beta(const ModelSpec& model, const Dataset& data) {
  if (model.n_fixed == 0) return Eigen::VectorXd();
  double y_scale = 0.0;
  for (const auto& ind : data.individuals) {
    y_scale = std::max(y_scale, ind.y.cwiseAbs().maxCoeff());
  }
  const std::vector<Eigen::VectorXd> candidates = {
      Eigen::VectorXd::Zero(model.n_fixed),
      Eigen::VectorXd::Constant(model.n_fixed, 1.0),
      Eigen::VectorXd::Constant(model.n_fixed, -1.0),
      Eigen::VectorXd::Constant(model.n_fixed, std::max(1.0, y_scale))};
  double best_rss = kInf;
  Eigen::VectorXd best;
  Eigen::VectorXd g;
  const Eigen::VectorXd s0 = Eigen::VectorXd::Zero(model.n_effects);
  for (const auto& beta : candidates) {
    double rss = 0.0;
    try {
      for (const auto& ind : data.individuals) {
        mean_eval_batch(model, ind.x, beta, s0, g);
        rss += (ind.y - g).squaredNorm();
      }
    } catch (const EvalError&) {
      continue;
    }
    if (rss < best_rss) {
      best_rss = rss;
      best = beta;
    }
  }
  if (!std::isfinite(best_rss)) {
    throw EstimationError(
        "fit: no feasible starting value for beta; provide init_beta or an "
        "explicit init");
  }
  return best;
}

// Method-of-moments start: beta from the model's initializer, sigma2 from
// within-individual residual spread, effect scales from between-individual
// spread divided by the mean's sensitivity to each effect.
Theta heuristic_start(const ModelSpec& model, const Dataset& data,
                      const ParamLayout& layout, const FitOptions& opts) {
  Theta theta;
  theta.beta = model.init_beta ? model.init_beta(data)
                               : probe_beta(model, data);
  if (theta.beta.size() != model.n_fixed) {
    throw ConfigError("fit: init_beta returned the wrong length");
  }
  theta.lambda = Eigen::MatrixXd::Zero(model.n_effects, model.n_effects);
  theta.sigma2 = 1.0;

  const Eigen::VectorXd s0 = Eigen::VectorXd::Zero(model.n_effects);
  Eigen::VectorXd g;
  double within = 0.0;
  int within_df = 0;
  double total_ss = 0.0;
  int total_n = 0;
  std::vector<double> ind_means;
  ind_means.reserve(data.individuals.size());
  for (const auto& ind : data.individuals) {
    mean_eval_batch(model, ind.x, theta.beta, s0, g);
    const Eigen::VectorXd r = ind.y - g;
    const double m = r.mean();
    ind_means.push_back(m);
    within += (r.array() - m).square().sum();
    within_df += static_cast<int>(r.size()) - 1;
    total_ss += r.squaredNorm();
    total_n += static_cast<int>(r.size());
  }
  const double v_total = std::max(total_ss / total_n, 1e-12);
  const double v_within = within_df > 0 ? within / within_df : v_total;
  theta.sigma2 = std::min(std::max(v_within, 1e3 * kSigma2Floor),
                          opts.sigma2_cap);

  double v_between = 0.0;
  for (double m : ind_means) v_between += m * m;
  v_between = v_between / ind_means.size();
  const double effect_var = std::max(v_between, 0.05 * v_total);

  // Sensitivity of the mean to each effect, probed at a small displacement
  // on the first few individuals.
  const double delta = 1e-4;
  Eigen::VectorXd g0;
  for (const auto& [i, j] : layout.lambda_entries) {
    if (i != j) continue;
    double sens = 0.0;
    int n_probe = 0;
    const int probe_individuals =
        std::min<int>(3, static_cast<int>(data.individuals.size()));
    for (int a = 0; a < probe_individuals; ++a) {
      const auto& ind = data.individuals[a];
      mean_eval_batch(model, ind.x, theta.beta, s0, g0);
      Eigen::VectorXd s = s0;
      s[i] = delta;
      try {
        mean_eval_batch(model, ind.x, theta.beta, s, g);
      } catch (const EvalError&) {
        continue;
      }
      sens += ((g - g0) / delta).squaredNorm();
      n_probe += static_cast<int>(g.size());
    }
    const double rms = n_probe > 0 ? std::sqrt(sens / n_probe) : 0.0;
    const double scale = std::sqrt(effect_var) / std::max(rms, 1e-3);
    theta.lambda(i, i) =
        std::min(std::max(scale, 1e-4), 0.1 * opts.lambda_bound);
  }
  return theta;
}

// ---------------------------------------------------------------------------
// Fit driver
// ---------------------------------------------------------------------------

FitResult fit_impl(const ModelSpec& model, const Dataset& data,
                   const QuadratureConfig& quad, const FitOptions& opts,
                   const std::vector<int>& frozen_rows) {
  validate(model);
  validate(data);
  validate(quad);
  if (opts.n_starts < 1) throw ConfigError("fit: n_starts must be >= 1");
  if (opts.x_tol <= 0.0 || opts.f_tol <= 0.0 || opts.max_evals < 1 ||
      opts.start_jitter < 0.0) {
    throw ConfigError("fit: tolerances must be positive and max_evals >= 1");
  }

  const ParamLayout layout = make_layout(model, opts, frozen_rows);
  Eigen::VectorXd lower, upper;
  layout.bounds(opts, lower, upper);

  LoglikCache cache;
  auto objective = [&](const Eigen::VectorXd& x) {
    try {
      return -loglik(model, data, layout.unpack(x), quad, &cache);
    } catch (const EvalError&) {
      return kInf;
    }
  };

  Theta start0;
  if (opts.init) {
    start0 = *opts.init;
    validate(start0);
    if (start0.n_fixed() != model.n_fixed ||
        start0.n_effects() != model.n_effects) {
      throw ConfigError("fit: init dimensions do not match the model");
    }
  } else {
    start0 = heuristic_start(model, data, layout, opts);
  }
  const Eigen::VectorXd x0 =
      layout.pack(start0).cwiseMax(lower).cwiseMin(upper);

  NelderMeadOptions nm;
  nm.max_evals = opts.max_evals;
  nm.x_tol = opts.x_tol;
  nm.f_tol = opts.f_tol;
  nm.init_step = opts.init_step;

  FitResult result;
  result.restarts_used = opts.n_starts;
  double best_value = kInf;
  Eigen::VectorXd best_x;
  bool any_converged = false;

  std::mt19937_64 jitter_rng(mix_seed(opts.seed, 0x5747u));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < opts.n_starts; ++s) {
    Eigen::VectorXd xs = x0;
    if (s > 0) {
      for (Eigen::Index k = 0; k < xs.size(); ++k) {
        const double scale = std::max(1.0, std::abs(x0[k]));
        xs[k] += opts.start_jitter * scale * normal(jitter_rng);
      }
      xs = xs.cwiseMax(lower).cwiseMin(upper);
    }
    const NelderMeadResult run =
        nelder_mead_minimize(objective, xs, lower, upper, nm);
    result.n_evals += run.n_evals;
    if (run.value < best_value) {
      best_value = run.value;
      best_x = run.x;
      any_converged = run.converged;
    } else if (run.value == best_value && run.converged) {
      any_converged = true;
    }
  }
  if (!std::isfinite(best_value)) {
    throw EstimationError(
        "fit: likelihood was non-finite at every point visited from every "
        "start");
  }

  if (opts.tight_polish) {
    // Polish with a tight simplex around the winner.
    NelderMeadOptions polish = nm;
    polish.init_step = 0.02;
    polish.max_evals = std::max(200, opts.max_evals / 2);
    const NelderMeadResult polished =
        nelder_mead_minimize(objective, best_x, lower, upper, polish);
    result.n_evals += polished.n_evals;
    if (polished.value <= best_value) {
      best_value = polished.value;
      best_x = polished.x;
      any_converged = any_converged || polished.converged;
    }
  }

  Theta theta = layout.unpack(best_x);

  // Snap near-zero lambda entries to exact zero so boundary solutions are
  // reported as boundary solutions.
  for (const auto& [i, j] : layout.lambda_entries) {
    if (std::abs(theta.lambda(i, j)) < opts.zero_tol) theta.lambda(i, j) = 0.0;
  }
  best_value = -loglik(model, data, theta, quad, &cache);

  if (opts.polish_boundary) {
    // Try collapsing whole effect rows; keep any zeroing that costs no
    // likelihood (up to rounding).  Smallest scales first.
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<std::pair<double, int>> rows;
      for (const auto& [i, j] : layout.lambda_entries) {
        if (i == j && theta.lambda(i, i) > 0.0) {
          rows.emplace_back(theta.lambda(i, i), i);
        }
      }
      std::sort(rows.begin(), rows.end());
      for (const auto& [scale, i] : rows) {
        Theta trial = theta;
        trial.lambda.row(i).setZero();
        double trial_value;
        try {
          trial_value = -loglik(model, data, trial, quad, &cache);
          ++result.n_evals;
        } catch (const EvalError&) {
          continue;
        }
        if (trial_value <=
            best_value + 1e-9 * std::max(1.0, std::abs(best_value))) {
          theta = trial;
          best_value = trial_value;
          changed = true;
          break;
        }
      }
    }
  }

  result.theta_hat = theta;
  result.loglik = -best_value;
  result.converged = any_converged;
  return result;
}

}  // namespace

FitResult mle_full(const ModelSpec& model, const Dataset& data,
                   const QuadratureConfig& quad, const FitOptions& opts) {
  return fit_impl(model, data, quad, opts, {});
}

FitResult mle_null(const ModelSpec& model, const Dataset& data,
                   const TestSpec& spec, const QuadratureConfig& quad,
                   const FitOptions& opts) {
  FitOptions null_opts = opts;
  if (null_opts.init) {
    null_opts.init = project_to_null(*null_opts.init, spec);
  }
  FitResult result = fit_impl(model, data, quad, null_opts,
                              tested_index(spec, model.n_effects));
  return result;
}

}  // namespace vcboot
