#include "vcboot/simstudy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vcboot/mean_functions.hpp"
#include "vcboot/parallel.hpp"
#include "vcboot/rng.hpp"

namespace vcboot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Seed-stream tags, one per purpose, so adding a consumer never shifts the
// draws of another.
constexpr std::uint64_t kTagDesign = 0xD051u;
constexpr std::uint64_t kTagData = 0xDA7Au;
constexpr std::uint64_t kTagFit = 0xF177u;
constexpr std::uint64_t kTagBoot = 0xB007u;

Eigen::MatrixXd column_design(std::initializer_list<double> values,
                              int n_powers) {
  // One row per observation; columns are (value, value^2, ...) as needed.
  Eigen::MatrixXd X(static_cast<Eigen::Index>(values.size()), n_powers);
  Eigen::Index j = 0;
  for (double v : values) {
    double pow_v = v;
    for (int c = 0; c < n_powers; ++c) {
      X(j, c) = pow_v;
      pow_v *= v;
    }
    ++j;
  }
  return X;
}

Theta diagonal_theta(std::initializer_list<double> beta,
                     std::initializer_list<double> lambda_diag,
                     double sigma2) {
  Theta theta;
  theta.beta.resize(static_cast<Eigen::Index>(beta.size()));
  Eigen::Index i = 0;
  for (double b : beta) theta.beta[i++] = b;
  const int p = static_cast<int>(lambda_diag.size());
  theta.lambda = Eigen::MatrixXd::Zero(p, p);
  i = 0;
  for (double l : lambda_diag) {
    theta.lambda(i, i) = l;
    ++i;
  }
  theta.sigma2 = sigma2;
  return theta;
}

bool in_null_space(const Theta& theta, const TestSpec& spec) {
  const Theta projected = project_to_null(theta, spec);
  return projected.lambda == theta.lambda;
}

// Per-replicate decision record: rejection per (bootstrap arm, alpha), one
// asymptotic p-value, and whether the replicate produced fits at all.
struct ReplicateOutcome {
  bool ok = false;
  double lrt_obs = kNaN;
  double p_asym = kNaN;
  std::vector<std::vector<bool>> reject;  // [arm][alpha]
};

bool want(const ScenarioConfig& config, Procedure p) {
  return std::find(config.procedures.begin(), config.procedures.end(), p) !=
         config.procedures.end();
}

// Runs the bootstrap replicate loop for one arm, stopping as soon as the
// accept/reject decision at every alpha is settled.  The stopping rule only
// uses bounds that hold however the remaining replicates turn out, so the
// decisions equal the full-loop ones.
std::vector<bool> arm_decisions(const ScenarioConfig& config,
                                const std::vector<Eigen::MatrixXd>& designs,
                                const Theta& theta_star, double lrt_obs,
                                std::uint64_t replicate_seed) {
  const int B = config.n_boot;
  const std::vector<double>& alphas = config.alpha_levels;
  std::vector<bool> decided(alphas.size(), false);
  std::vector<bool> reject(alphas.size(), false);
  long n_above = 0;
  long n_success = 0;

  FitOptions refit = config.fit;
  refit.init = theta_star;
  refit.init_step = std::min(config.fit.init_step, 0.05);
  refit.n_starts = 1;

  for (int b = 0; b < B; ++b) {
    std::size_t n_decided = 0;
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      if (decided[a]) {
        ++n_decided;
        continue;
      }
      const long remaining = B - b;
      // Certain non-rejection: p_final >= n_above / B >= alpha already.
      if (static_cast<double>(n_above) >= alphas[a] * B) {
        decided[a] = true;
        reject[a] = false;
        ++n_decided;
        continue;
      }
      // Certain rejection: even if every remaining replicate exceeds,
      // p_final <= (n_above + remaining) / (n_success + remaining) < alpha.
      const double p_max =
          static_cast<double>(n_above + remaining) /
          static_cast<double>(n_success + remaining);
      if (p_max < alphas[a]) {
        decided[a] = true;
        reject[a] = true;
        ++n_decided;
      }
    }
    if (n_decided == alphas.size()) break;

    const std::uint64_t seed_b = mix_seed(replicate_seed, b);
    std::mt19937_64 rng = make_engine(seed_b);
    FitOptions opts_b = refit;
    opts_b.seed = mix_seed(seed_b, 1);
    try {
      const Dataset resampled =
          simulate_dataset(config.model, theta_star, designs, rng);
      const FitPair pair =
          fit_lrt_pair(config.model, resampled, config.spec, config.quad,
                       opts_b);
      ++n_success;
      if (pair.lrt > lrt_obs) ++n_above;
    } catch (const EstimationError&) {
    } catch (const EvalError&) {
    }
  }
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    if (!decided[a]) {
      // Loop exhausted: decide from the final counts.
      if (n_success == 0) {
        reject[a] = false;
      } else {
        const double p = static_cast<double>(n_above) /
                         static_cast<double>(n_success);
        reject[a] = p < alphas[a];
      }
    }
  }
  return reject;
}

ReplicateOutcome run_replicate(const ScenarioConfig& config,
                               const Theta& theta_gen, int k) {
  ReplicateOutcome out;
  out.reject.assign(config.policies.size(),
                    std::vector<bool>(config.alpha_levels.size(), false));

  std::vector<Eigen::MatrixXd> designs;
  if (config.random_designs) {
    std::mt19937_64 rng =
        make_engine(mix_seed(config.seed, kTagDesign, k));
    designs = config.design_generator(config.n_individuals, rng);
  } else {
    designs = config.fixed_designs;
  }

  std::mt19937_64 data_rng = make_engine(mix_seed(config.seed, kTagData, k));
  Dataset data;
  FitPair observed;
  try {
    data = simulate_dataset(config.model, theta_gen, designs, data_rng);
    FitOptions opts = config.fit;
    opts.seed = mix_seed(config.seed, kTagFit, k);
    observed = fit_lrt_pair(config.model, data, config.spec, config.quad,
                            opts);
  } catch (const EstimationError&) {
    return out;
  } catch (const EvalError&) {
    return out;
  }
  out.ok = true;
  out.lrt_obs = observed.lrt;
  out.p_asym = asymptotic_pvalue_single(observed.lrt);

  // Every arm reuses the same replicate seed stream, so the comparison
  // between thresholds is paired draw by draw.
  const std::uint64_t replicate_seed = mix_seed(config.seed, kTagBoot, k);
  for (std::size_t arm = 0; arm < config.policies.size(); ++arm) {
    const Theta& seed_theta = config.policies[arm].seed_from_unrestricted
                                  ? observed.full.theta_hat
                                  : observed.null.theta_hat;
    const Theta theta_star =
        shrink_parameter(seed_theta, config.spec, config.policies[arm]);
    out.reject[arm] =
        arm_decisions(config, designs, theta_star, out.lrt_obs,
                      replicate_seed);
  }
  return out;
}

ScenarioResult aggregate(const ScenarioConfig& config,
                         const std::vector<ReplicateOutcome>& outcomes,
                         double tested_value, double rho) {
  ScenarioResult result;
  int k_eff = 0;
  for (const auto& o : outcomes) k_eff += o.ok ? 1 : 0;

  auto push_row = [&](const std::string& procedure, double alpha, double c_n,
                      double rate) {
    ScenarioRow row;
    row.procedure = procedure;
    row.alpha = alpha;
    row.c_n = c_n;
    row.n_nuisance = config.n_nuisance;
    row.tested_value = tested_value;
    row.rho = rho;
    row.rate = rate;
    row.stderr_rate =
        k_eff > 0 ? std::sqrt(rate * (1.0 - rate) / k_eff) : kNaN;
    row.k_effective = k_eff;
    result.rows.push_back(std::move(row));
  };

  if (want(config, Procedure::bootstrap)) {
    for (std::size_t arm = 0; arm < config.policies.size(); ++arm) {
      for (std::size_t a = 0; a < config.alpha_levels.size(); ++a) {
        long n_reject = 0;
        for (const auto& o : outcomes) {
          if (o.ok && o.reject[arm][a]) ++n_reject;
        }
        const double rate =
            k_eff > 0 ? static_cast<double>(n_reject) / k_eff : kNaN;
        push_row("bootstrap", config.alpha_levels[a],
                 config.policies[arm].c_n, rate);
      }
    }
  }
  if (want(config, Procedure::asymptotic)) {
    for (double alpha : config.alpha_levels) {
      long n_reject = 0;
      for (const auto& o : outcomes) {
        if (o.ok && o.p_asym < alpha) ++n_reject;
      }
      const double rate =
          k_eff > 0 ? static_cast<double>(n_reject) / k_eff : kNaN;
      push_row("asymptotic", alpha, kNaN, rate);
    }
  }
  return result;
}

ScenarioResult run_experiment(const ScenarioConfig& config,
                              const Theta& theta_gen, double tested_value,
                              double rho) {
  std::vector<ReplicateOutcome> outcomes(config.n_outer);
  parallel_for(config.n_outer, config.workers, [&](int k) {
    outcomes[k] = run_replicate(config, theta_gen, k);
  });
  return aggregate(config, outcomes, tested_value, rho);
}

}  // namespace

void validate(const ScenarioConfig& config) {
  validate(config.model);
  validate(config.theta0);
  validate(config.spec, config.model.n_effects);
  validate(config.quad);
  if (config.n_outer < 1 || config.n_boot < 1) {
    throw ConfigError("scenario: K and B must both be at least 1");
  }
  if (config.n_individuals < 1) {
    throw ConfigError("scenario: need at least one individual");
  }
  if (config.alpha_levels.empty()) {
    throw ConfigError("scenario: no alpha levels given");
  }
  for (double a : config.alpha_levels) {
    if (!(a > 0.0 && a < 1.0)) {
      throw ConfigError("scenario: alpha levels must lie strictly in (0,1)");
    }
  }
  if (config.policies.empty() && want(config, Procedure::bootstrap)) {
    throw ConfigError("scenario: bootstrap requested without a policy");
  }
  if (config.procedures.empty()) {
    throw ConfigError("scenario: no procedures requested");
  }
  if (want(config, Procedure::asymptotic) &&
      config.spec.tested_rows.size() != 1) {
    throw ConfigError(
        "scenario: the asymptotic reference applies to a single tested "
        "variance only; drop it or test one row");
  }
  if (config.random_designs) {
    if (!config.design_generator) {
      throw ConfigError("scenario: random designs need a design_generator");
    }
  } else {
    if (static_cast<int>(config.fixed_designs.size()) !=
        config.n_individuals) {
      throw ConfigError(
          "scenario: fixed_designs must hold one matrix per individual");
    }
  }
}

ScenarioConfig build_scenario(ModelId id) {
  ScenarioConfig config;
  config.model_id = id;
  // Simulation-scale fit profile: two starts and a single simplex pass per
  // start keep the replicate loops affordable; tolerances stay well below
  // the Monte Carlo resolution of the study.
  config.fit.n_starts = 2;
  config.fit.tight_polish = false;
  config.fit.x_tol = 1e-5;
  config.fit.f_tol = 1e-8;
  switch (id) {
    case ModelId::m1: {
      config.model = linear_model({0, 1}, {0, 1}, "m1");
      config.n_individuals = 20;
      config.n_outer = 500;
      config.n_boot = 200;
      config.theta0 =
          diagonal_theta({0.0, 7.0}, {std::sqrt(1.3), 0.0}, 1.5 * 1.5);
      config.spec.tested_rows = {2};
      config.seed = 101;
      const Eigen::MatrixXd X = column_design({1, 2, 3, 4, 5}, 1);
      config.fixed_designs.assign(config.n_individuals, X);
      break;
    }
    case ModelId::m2: {
      config.model = linear_model({0, 1, 2}, {0, 1, 2}, "m2");
      config.n_individuals = 40;
      config.n_outer = 500;
      config.n_boot = 200;
      config.theta0 = diagonal_theta({0.0, 7.0, 3.0},
                                     {std::sqrt(1.3), 0.0, 0.0}, 1.5 * 1.5);
      config.spec.tested_rows = {3};
      config.n_nuisance = 1;
      config.seed = 202;
      const Eigen::MatrixXd X = column_design({1, 2, 3, 4, 5}, 2);
      config.fixed_designs.assign(config.n_individuals, X);
      break;
    }
    case ModelId::m3: {
      config.model = linear_model({}, {1, 2, 3, 4, 5, 6, 7, 8}, "m3");
      config.n_individuals = 30;
      config.n_outer = 300;
      config.n_boot = 150;
      config.theta0 = diagonal_theta(
          {}, {0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0}, 2.0);
      config.spec.tested_rows = {1};
      config.seed = 303;
      config.random_designs = true;
      config.design_generator = [](int n, std::mt19937_64& rng) {
        std::normal_distribution<double> covariate(2.0, 0.5);
        std::vector<Eigen::MatrixXd> designs(n);
        for (auto& X : designs) {
          X.resize(9, 8);
          for (Eigen::Index j = 0; j < X.rows(); ++j) {
            for (Eigen::Index c = 0; c < X.cols(); ++c) {
              X(j, c) = covariate(rng);
            }
          }
        }
        return designs;
      };
      break;
    }
    case ModelId::m4: {
      config.model = logistic_model(1, "m4");
      config.n_individuals = 40;
      config.n_outer = 200;
      config.n_boot = 200;
      config.theta0 =
          diagonal_theta({200.0, 500.0, 150.0}, {10.0, 10.0, 0.0}, 25.0);
      config.spec.tested_rows = {3};
      config.seed = 404;
      const Eigen::MatrixXd X = column_design(
          {50, 287.5, 525, 762, 1000, 1100, 1200, 1300, 1400, 1500}, 1);
      config.fixed_designs.assign(config.n_individuals, X);
      // One adaptive node (Laplace) keeps the refit loops tractable; the
      // statistic differences it induces cancel between full and null fits.
      config.quad.n_nodes = 1;
      config.quad.mode_tol = 1e-6;
      break;
    }
  }
  ShrinkPolicy policy;
  policy.c_n = default_shrink(config.n_individuals);
  if (id == ModelId::m3) {
    config.policies = {};
    for (double c : {0.0, 0.24, 0.9}) {
      ShrinkPolicy arm;
      arm.c_n = c;
      config.policies.push_back(arm);
    }
  } else {
    config.policies = {policy};
  }
  return config;
}

ModelId parse_model_id(const std::string& name) {
  if (name == "m1") return ModelId::m1;
  if (name == "m2") return ModelId::m2;
  if (name == "m3") return ModelId::m3;
  if (name == "m4") return ModelId::m4;
  throw ConfigError("unknown scenario id '" + name +
                    "'; known ids: m1, m2, m3, m4");
}

std::string model_id_name(ModelId id) {
  switch (id) {
    case ModelId::m1: return "m1";
    case ModelId::m2: return "m2";
    case ModelId::m3: return "m3";
    case ModelId::m4: return "m4";
  }
  return "?";
}

ScenarioResult empirical_level(const ScenarioConfig& config) {
  validate(config);
  if (!in_null_space(config.theta0, config.spec)) {
    throw ConfigError(
        "empirical_level: theta0 must lie in the null space of the tested "
        "rows (the level is only defined under the null)");
  }
  return run_experiment(config, config.theta0, kNaN, kNaN);
}

ScenarioResult empirical_power(
    const ScenarioConfig& config,
    const std::vector<std::pair<double, double>>& grid) {
  validate(config);
  if (config.spec.tested_rows.size() != 1) {
    throw ConfigError("empirical_power: the grid drives a single tested row");
  }
  if (grid.empty()) {
    throw ConfigError("empirical_power: empty grid");
  }
  const int tested = tested_index(config.spec, config.theta0.n_effects())[0];
  const std::vector<int> untested =
      untested_index(config.spec, config.theta0.n_effects());

  ScenarioResult result;
  for (const auto& [value, rho] : grid) {
    if (value < 0.0 || std::abs(rho) > 1.0) {
      throw ConfigError("empirical_power: need variance >= 0 and |rho| <= 1");
    }
    Eigen::MatrixXd gamma = gamma_of(config.theta0);
    gamma(tested, tested) = value;
    if (rho != 0.0) {
      if (untested.empty()) {
        throw ConfigError(
            "empirical_power: correlation needs an untested effect");
      }
      const int partner = untested.front();
      const double cov =
          rho * std::sqrt(gamma(partner, partner) * value);
      gamma(tested, partner) = cov;
      gamma(partner, tested) = cov;
    }
    Theta theta_alt = config.theta0;
    try {
      theta_alt.lambda = psd_cholesky(gamma);
    } catch (const EvalError&) {
      std::ostringstream msg;
      msg << "empirical_power: grid point (variance = " << value
          << ", rho = " << rho << ") gives an indefinite Gamma";
      throw ConfigError(msg.str());
    }
    validate(theta_alt);
    const ScenarioResult cell = run_experiment(config, theta_alt, value, rho);
    result.rows.insert(result.rows.end(), cell.rows.begin(),
                       cell.rows.end());
  }
  return result;
}

ScenarioResult nuisance_sweep(const ScenarioConfig& config,
                              const std::vector<int>& s_values,
                              const std::vector<double>& c_values) {
  validate(config);
  if (s_values.empty() || c_values.empty()) {
    throw ConfigError("nuisance_sweep: empty s or c grid");
  }
  const std::vector<int> untested =
      untested_index(config.spec, config.theta0.n_effects());

  ScenarioResult result;
  for (int s : s_values) {
    if (s < 0 || s > static_cast<int>(untested.size())) {
      std::ostringstream msg;
      msg << "nuisance_sweep: s = " << s << " exceeds the "
          << untested.size() << " untested effects";
      throw ConfigError(msg.str());
    }
    ScenarioConfig cell = config;
    cell.n_nuisance = s;
    // Zero the trailing s untested variances.  The procedure never looks at
    // the location, so a fixed placement keeps runs reproducible.
    for (int a = 0; a < s; ++a) {
      cell.theta0.lambda.row(untested[untested.size() - 1 - a]).setZero();
    }
    cell.policies.clear();
    for (double c : c_values) {
      if (c < 0.0) throw ConfigError("nuisance_sweep: c_n must be >= 0");
      ShrinkPolicy policy;
      policy.c_n = c;
      cell.policies.push_back(policy);
    }
    cell.seed = mix_seed(config.seed, 0x5EEDu, static_cast<std::uint64_t>(s));
    const ScenarioResult rows = empirical_level(cell);
    result.rows.insert(result.rows.end(), rows.rows.begin(),
                       rows.rows.end());
  }
  return result;
}

RatioReport ratio_criterion_check(const ModelSpec& model,
                                  const std::vector<Eigen::MatrixXd>& designs,
                                  const ThetaBox& box, double epsilon,
                                  const std::vector<double>& radius_grid,
                                  int n_directions, std::uint64_t seed) {
  validate(model);
  if (epsilon <= 0.0) {
    throw ConfigError("ratio_criterion_check: epsilon must be positive");
  }
  if (designs.empty() || radius_grid.empty() || n_directions < 1) {
    throw ConfigError(
        "ratio_criterion_check: need designs, radii, and directions");
  }
  validate(box.lo, /*allow_zero_sigma2=*/true);
  validate(box.hi, /*allow_zero_sigma2=*/true);
  const int p = model.n_effects;
  if (box.lo.n_effects() != p || box.hi.n_effects() != p ||
      box.lo.n_fixed() != model.n_fixed || box.hi.n_fixed() != model.n_fixed) {
    throw ConfigError("ratio_criterion_check: box does not match the model");
  }

  std::vector<double> radii = radius_grid;
  std::sort(radii.begin(), radii.end());
  for (double r : radii) {
    if (r <= 0.0) {
      throw ConfigError("ratio_criterion_check: radii must be positive");
    }
  }

  std::mt19937_64 rng = make_engine(mix_seed(seed, 0x5A7107u));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  RatioReport report;
  report.epsilon = epsilon;
  report.radii = radii;
  report.max_ratio.assign(radii.size(), 0.0);

  Eigen::VectorXd g;
  for (int d = 0; d < n_directions; ++d) {
    // One sampled parameter per direction keeps the loop budget linear.
    Theta theta = box.lo;
    for (Eigen::Index k = 0; k < theta.beta.size(); ++k) {
      theta.beta[k] =
          box.lo.beta[k] + uniform(rng) * (box.hi.beta[k] - box.lo.beta[k]);
    }
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j <= i; ++j) {
        double lo = box.lo.lambda(i, j);
        double hi = box.hi.lambda(i, j);
        double v = lo + uniform(rng) * (hi - lo);
        if (i == j) v = std::max(0.0, v);
        theta.lambda(i, j) = v;
      }
    }
    Eigen::VectorXd direction(p);
    double norm = 0.0;
    while (norm == 0.0) {
      for (int k = 0; k < p; ++k) direction[k] = normal(rng);
      norm = direction.norm();
    }
    direction /= norm;

    for (std::size_t r = 0; r < radii.size(); ++r) {
      const Eigen::VectorXd s = theta.lambda * (radii[r] * direction);
      double worst = 0.0;
      for (const auto& X : designs) {
        mean_eval_batch(model, X, theta.beta, s, g);
        worst = std::max(worst, g.cwiseAbs().maxCoeff());
      }
      report.max_ratio[r] =
          std::max(report.max_ratio[r], worst / radii[r]);
    }
  }

  // Smallest radius from which on the sampled ratio never exceeds epsilon.
  report.supported = false;
  for (std::size_t r = radii.size(); r-- > 0;) {
    if (report.max_ratio[r] <= epsilon) {
      report.supported = true;
      report.min_radius = radii[r];
    } else {
      break;
    }
  }
  return report;
}

}  // namespace vcboot
