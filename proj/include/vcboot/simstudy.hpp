#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vcboot/bootstrap.hpp"
#include "vcboot/fit.hpp"
#include "vcboot/types.hpp"

namespace vcboot {

// Built-in study scenarios:
//   m1: linear, random intercept + random slope in x; slope variance tested.
//   m2: linear in (1, x, x^2), three independent effects; the x^2 effect is
//       tested and the x effect is a zero-variance nuisance.
//   m3: linear through 8 covariate-scaled effects, no fixed effects; the
//       first effect is tested, a configurable number of the others are
//       zero-variance nuisances.
//   m4: logistic growth curve, asymptote/midpoint/scale effects; the scale
//       variance is tested.
enum class ModelId { m1, m2, m3, m4 };

enum class Procedure { bootstrap, asymptotic };

struct ScenarioConfig {
  ModelId model_id = ModelId::m1;
  ModelSpec model;
  int n_individuals = 20;  // N
  int n_outer = 500;       // K, outer Monte Carlo replicates
  int n_boot = 200;        // B, bootstrap replicates per dataset
  std::vector<double> alpha_levels = {0.01, 0.05, 0.10};
  Theta theta0;
  TestSpec spec;
  std::vector<ShrinkPolicy> policies;  // one bootstrap arm per policy
  std::vector<Procedure> procedures = {Procedure::bootstrap,
                                       Procedure::asymptotic};
  std::uint64_t seed = 1;
  int n_nuisance = 0;  // zeroed untested variances (bookkeeping for reports)
  QuadratureConfig quad;
  FitOptions fit;
  int workers = 1;
  // Covariate matrices: shared across replicates when fixed, or redrawn per
  // replicate (m3's random covariates).
  std::vector<Eigen::MatrixXd> fixed_designs;
  bool random_designs = false;
  // Generator for random designs: (N, rng) -> N covariate matrices.
  std::function<std::vector<Eigen::MatrixXd>(int, std::mt19937_64&)>
      design_generator;
};

void validate(const ScenarioConfig& config);

struct ScenarioRow {
  std::string procedure;
  double alpha = 0.0;
  double c_n = 0.0;          // NaN on asymptotic rows (no threshold involved)
  int n_nuisance = 0;
  double tested_value = 0.0;  // power grid coordinates; NaN on level rows
  double rho = 0.0;
  double rate = 0.0;
  double stderr_rate = 0.0;
  int k_effective = 0;
};

struct ScenarioResult {
  std::vector<ScenarioRow> rows;
};

// Built-in scenario presets; callers override fields afterwards.
ScenarioConfig build_scenario(ModelId id);
ModelId parse_model_id(const std::string& name);
std::string model_id_name(ModelId id);

// Empirical type I error: simulate K datasets under theta0 (which must lie
// in the null space), run every procedure arm on each, report rejection
// rates.  Arms share per-replicate seeds, so comparisons are paired.
ScenarioResult empirical_level(const ScenarioConfig& config);

// Empirical power over a grid of (tested variance, correlation) pairs; the
// correlation couples the tested effect with the first untested effect.
// The (0, 0) grid point reproduces the level.
ScenarioResult empirical_power(
    const ScenarioConfig& config,
    const std::vector<std::pair<double, double>>& grid);

// Level as a function of the nuisance count s (zeroed untested variances,
// placed at the tail of the untested index set) and the threshold c_n.
ScenarioResult nuisance_sweep(const ScenarioConfig& config,
                              const std::vector<int>& s_values,
                              const std::vector<double>& c_values);

// ---------------------------------------------------------------------------
// Regularity probe
// ---------------------------------------------------------------------------

// Entrywise box over Theta for sampling.
struct ThetaBox {
  Theta lo;
  Theta hi;
};

struct RatioReport {
  double epsilon = 0.0;
  std::vector<double> radii;
  std::vector<double> max_ratio;  // worst |g| / ||xi|| observed per radius
  bool supported = false;
  // Smallest grid radius from which on every sampled ratio stays <= epsilon.
  double min_radius = 0.0;
};

// Numeric falsification probe for the growth condition that |g(x, beta,
// lambda*xi)| / ||xi|| eventually stays below epsilon: samples directions on
// the unit sphere and parameters in the box, scans the radius grid, and
// reports where (if anywhere) the bound holds for all samples.  Evidence,
// not proof.
RatioReport ratio_criterion_check(const ModelSpec& model,
                                  const std::vector<Eigen::MatrixXd>& designs,
                                  const ThetaBox& box, double epsilon,
                                  const std::vector<double>& radius_grid,
                                  int n_directions, std::uint64_t seed);

}  // namespace vcboot
