#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "vcboot/mean_functions.hpp"
#include "vcboot/rng.hpp"
#include "vcboot/simstudy.hpp"

using namespace vcboot;

namespace {

bool rows_equal(const ScenarioRow& a, const ScenarioRow& b) {
  auto same = [](double x, double y) {
    return (std::isnan(x) && std::isnan(y)) || x == y;
  };
  return a.procedure == b.procedure && a.alpha == b.alpha &&
         same(a.c_n, b.c_n) && a.n_nuisance == b.n_nuisance &&
         same(a.tested_value, b.tested_value) && same(a.rho, b.rho) &&
         a.rate == b.rate && a.stderr_rate == b.stderr_rate &&
         a.k_effective == b.k_effective;
}

ScenarioConfig tiny_m1() {
  ScenarioConfig config = build_scenario(ModelId::m1);
  config.n_individuals = 8;
  config.fixed_designs.resize(8);
  config.n_outer = 2;
  config.n_boot = 4;
  config.fit.n_starts = 1;
  return config;
}

}  // namespace

TEST_SUITE_BEGIN("simstudy");

TEST_CASE("presets carry the study designs") {
  const ScenarioConfig m1 = build_scenario(ModelId::m1);
  CHECK(m1.n_individuals == 20);
  CHECK(m1.n_outer == 500);
  CHECK(m1.n_boot == 200);
  CHECK(m1.theta0.beta[1] == 7.0);
  CHECK(m1.theta0.lambda(0, 0) == doctest::Approx(std::sqrt(1.3)));
  CHECK(m1.theta0.lambda(1, 1) == 0.0);
  CHECK(m1.theta0.sigma2 == 2.25);
  CHECK(m1.spec.tested_rows == std::vector<int>{2});
  REQUIRE(m1.fixed_designs.size() == 20);
  CHECK(m1.fixed_designs[0].rows() == 5);
  CHECK(m1.fixed_designs[0](4, 0) == 5.0);
  REQUIRE(m1.policies.size() == 1);
  CHECK(m1.policies[0].c_n == doctest::Approx(default_shrink(20)));

  const ScenarioConfig m2 = build_scenario(ModelId::m2);
  CHECK(m2.n_individuals == 40);
  CHECK(m2.theta0.beta.size() == 3);
  CHECK(m2.spec.tested_rows == std::vector<int>{3});
  CHECK(m2.n_nuisance == 1);
  CHECK(m2.fixed_designs[0].cols() == 2);
  CHECK(m2.fixed_designs[0](2, 1) == 9.0);

  const ScenarioConfig m3 = build_scenario(ModelId::m3);
  CHECK(m3.model.n_fixed == 0);
  CHECK(m3.model.n_effects == 8);
  CHECK(m3.random_designs);
  REQUIRE(bool(m3.design_generator));
  std::mt19937_64 rng = make_engine(1);
  const auto designs = m3.design_generator(4, rng);
  REQUIRE(designs.size() == 4);
  CHECK(designs[0].rows() == 9);
  CHECK(designs[0].cols() == 8);
  CHECK(m3.policies.size() == 3);
  CHECK(m3.policies[0].c_n == 0.0);
  CHECK(m3.policies[1].c_n == 0.24);

  const ScenarioConfig m4 = build_scenario(ModelId::m4);
  CHECK(m4.model.name == "m4");
  CHECK_FALSE(m4.model.linear_in_effects);
  CHECK(m4.quad.n_nodes == 1);
  CHECK(m4.theta0.beta[0] == 200.0);
  CHECK(m4.theta0.lambda(2, 2) == 0.0);
  CHECK(m4.fixed_designs[0].rows() == 10);
  CHECK(m4.fixed_designs[0](9, 0) == 1500.0);
}

TEST_CASE("model ids round-trip and unknown names are listed") {
  for (ModelId id :
       {ModelId::m1, ModelId::m2, ModelId::m3, ModelId::m4}) {
    CHECK(parse_model_id(model_id_name(id)) == id);
  }
  CHECK_THROWS_WITH_AS(parse_model_id("m9"), doctest::Contains("m1"),
                       ConfigError);
}

TEST_CASE("configs that cannot run are refused") {
  ScenarioConfig two_rows = tiny_m1();
  two_rows.spec.tested_rows = {1, 2};
  // The mixture reference only covers a single tested component.
  CHECK_THROWS_AS(validate(two_rows), ConfigError);
  two_rows.procedures = {Procedure::bootstrap};
  CHECK_NOTHROW(validate(two_rows));

  ScenarioConfig no_alpha = tiny_m1();
  no_alpha.alpha_levels.clear();
  CHECK_THROWS_AS(validate(no_alpha), ConfigError);

  ScenarioConfig short_designs = tiny_m1();
  short_designs.fixed_designs.resize(3);
  CHECK_THROWS_AS(validate(short_designs), ConfigError);

  ScenarioConfig no_generator = build_scenario(ModelId::m3);
  no_generator.design_generator = nullptr;
  CHECK_THROWS_AS(validate(no_generator), ConfigError);
}

TEST_CASE("a tiny level study produces one row per arm and alpha") {
  ScenarioConfig config = tiny_m1();
  const ScenarioResult result = empirical_level(config);
  // One bootstrap policy and the asymptotic reference, three levels each.
  REQUIRE(result.rows.size() == 6);
  for (const auto& row : result.rows) {
    CHECK(row.k_effective == 2);
    CHECK((row.rate == 0.0 || row.rate == 0.5 || row.rate == 1.0));
    CHECK(std::isnan(row.tested_value));
    if (row.procedure == "asymptotic") {
      CHECK(std::isnan(row.c_n));
    } else {
      CHECK(row.procedure == "bootstrap");
      CHECK(row.c_n == doctest::Approx(default_shrink(20)));
    }
  }
  CHECK(result.rows[0].alpha == 0.01);
  CHECK(result.rows[1].alpha == 0.05);
  CHECK(result.rows[2].alpha == 0.10);
}

TEST_CASE("a generator outside the null space is rejected") {
  ScenarioConfig config = tiny_m1();
  config.theta0.lambda(1, 1) = 0.5;
  CHECK_THROWS_AS(empirical_level(config), ConfigError);
}

TEST_CASE("level studies are reproducible across runs and workers") {
  ScenarioConfig config = tiny_m1();
  const ScenarioResult a = empirical_level(config);
  const ScenarioResult b = empirical_level(config);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(rows_equal(a.rows[i], b.rows[i]));
  }

  ScenarioConfig threaded = config;
  threaded.workers = 3;
  const ScenarioResult c = empirical_level(threaded);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(rows_equal(a.rows[i], c.rows[i]));
  }
}

TEST_CASE("the power grid tags its coordinates and nests the level") {
  ScenarioConfig config = tiny_m1();
  const std::vector<std::pair<double, double>> grid = {{0.0, 0.0},
                                                       {0.4, 0.5}};
  const ScenarioResult power = empirical_power(config, grid);
  REQUIRE(power.rows.size() == 12);
  for (std::size_t i = 0; i < power.rows.size(); ++i) {
    const auto& row = power.rows[i];
    const double value = i < 6 ? 0.0 : 0.4;
    const double rho = i < 6 ? 0.0 : 0.5;
    CHECK(row.tested_value == value);
    CHECK(row.rho == rho);
  }

  // The origin of the grid is the null generator, so those rows must
  // reproduce the level study exactly.
  const ScenarioResult level = empirical_level(config);
  for (std::size_t i = 0; i < level.rows.size(); ++i) {
    CHECK(power.rows[i].rate == level.rows[i].rate);
  }
}

TEST_CASE("an impossible power correlation is rejected") {
  ScenarioConfig config = tiny_m1();
  CHECK_THROWS_AS(empirical_power(config, {{0.4, 1.5}}), ConfigError);
}

TEST_CASE("the nuisance sweep walks the untested variances") {
  ScenarioConfig config = build_scenario(ModelId::m3);
  config.n_individuals = 6;
  config.n_outer = 1;
  config.n_boot = 2;
  config.fit.n_starts = 1;
  config.fit.max_evals = 600;
  config.procedures = {Procedure::bootstrap};

  const ScenarioResult sweep = nuisance_sweep(config, {0, 7}, {0.0, 0.24});
  // Two s values, two thresholds, three levels.
  REQUIRE(sweep.rows.size() == 12);
  CHECK(sweep.rows.front().n_nuisance == 0);
  CHECK(sweep.rows.back().n_nuisance == 7);
  for (const auto& row : sweep.rows) {
    CHECK(row.procedure == "bootstrap");
    CHECK((row.c_n == 0.0 || row.c_n == 0.24));
  }

  CHECK_THROWS_AS(nuisance_sweep(config, {8}, {0.0}), ConfigError);
  CHECK_THROWS_AS(nuisance_sweep(config, {-1}, {0.0}), ConfigError);
}

TEST_CASE("the growth-ratio probe separates bounded from linear means") {
  // Bounded mean: the ratio decays like 1/r once the radius beats the
  // asymptote, so some tail of the grid supports the bound.
  const ModelSpec logistic = logistic_model();
  ThetaBox box;
  box.lo.beta = Eigen::Vector3d(190.0, 480.0, 140.0);
  box.hi.beta = Eigen::Vector3d(210.0, 520.0, 160.0);
  box.lo.lambda = Eigen::MatrixXd::Zero(3, 3);
  box.hi.lambda = Eigen::Vector3d(2.0, 2.0, 2.0).asDiagonal();
  box.lo.sigma2 = 1.0;
  box.hi.sigma2 = 1.0;
  const std::vector<Eigen::MatrixXd> designs = {
      build_scenario(ModelId::m4).fixed_designs[0]};

  const RatioReport bounded = ratio_criterion_check(
      logistic, designs, box, 5.0, {1.0, 10.0, 100.0, 1000.0}, 40, 11);
  CHECK(bounded.supported);
  CHECK(bounded.min_radius <= 1000.0);
  CHECK(bounded.min_radius > 1.0);
  CHECK(bounded.max_ratio.front() > bounded.max_ratio.back());

  // Linear mean: |g| grows linearly with the radius, so the ratio levels
  // off at the effect scale and a small epsilon is never supported.
  const ModelSpec linear = linear_model({0, 1}, {0, 1});
  ThetaBox lin_box;
  lin_box.lo.beta = Eigen::Vector2d(0.0, 7.0);
  lin_box.hi.beta = Eigen::Vector2d(0.0, 7.0);
  lin_box.lo.lambda = Eigen::Vector2d(1.0, 0.5).asDiagonal();
  lin_box.hi.lambda = Eigen::Vector2d(1.5, 1.0).asDiagonal();
  lin_box.lo.sigma2 = 1.0;
  lin_box.hi.sigma2 = 1.0;
  Eigen::MatrixXd ramp(5, 1);
  ramp << 1, 2, 3, 4, 5;

  const RatioReport unbounded = ratio_criterion_check(
      linear, {ramp}, lin_box, 0.01, {1.0, 10.0, 100.0, 1000.0}, 40, 11);
  CHECK_FALSE(unbounded.supported);

  // A mean that vanishes identically supports any epsilon from the first
  // radius on.
  ModelSpec flat = linear_model({0}, {0});
  flat.mean_batch = [](const Eigen::MatrixXd& X, const Eigen::VectorXd&,
                       const Eigen::VectorXd&, Eigen::VectorXd& out) {
    out.setZero(X.rows());
  };
  ThetaBox flat_box;
  flat_box.lo.beta = Eigen::VectorXd::Zero(1);
  flat_box.hi.beta = Eigen::VectorXd::Zero(1);
  flat_box.lo.lambda = Eigen::MatrixXd::Identity(1, 1);
  flat_box.hi.lambda = Eigen::MatrixXd::Identity(1, 1);
  flat_box.lo.sigma2 = 1.0;
  flat_box.hi.sigma2 = 1.0;
  const RatioReport flat_report = ratio_criterion_check(
      flat, {ramp}, flat_box, 0.01, {2.0, 4.0}, 10, 11);
  CHECK(flat_report.supported);
  CHECK(flat_report.min_radius == 2.0);
}

TEST_CASE("the growth-ratio probe validates its inputs") {
  const ModelSpec linear = linear_model({0}, {0});
  ThetaBox box;
  box.lo.beta = Eigen::VectorXd::Zero(1);
  box.hi.beta = Eigen::VectorXd::Zero(1);
  box.lo.lambda = Eigen::MatrixXd::Identity(1, 1);
  box.hi.lambda = Eigen::MatrixXd::Identity(1, 1);
  box.lo.sigma2 = 1.0;
  box.hi.sigma2 = 1.0;
  Eigen::MatrixXd ramp(3, 1);
  ramp << 1, 2, 3;

  CHECK_THROWS_AS(
      ratio_criterion_check(linear, {ramp}, box, 0.0, {1.0}, 5, 1),
      ConfigError);
  CHECK_THROWS_AS(
      ratio_criterion_check(linear, {ramp}, box, 1.0, {}, 5, 1),
      ConfigError);
  CHECK_THROWS_AS(
      ratio_criterion_check(linear, {ramp}, box, 1.0, {-1.0, 2.0}, 5, 1),
      ConfigError);
  CHECK_THROWS_AS(
      ratio_criterion_check(linear, {ramp}, box, 1.0, {1.0}, 0, 1),
      ConfigError);

  ThetaBox wrong = box;
  wrong.hi.lambda = Eigen::MatrixXd::Identity(2, 2);
  wrong.hi.beta = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(
      ratio_criterion_check(linear, {ramp}, wrong, 1.0, {1.0}, 5, 1),
      ConfigError);
}

TEST_SUITE_END();
