#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "vcboot/bootstrap.hpp"
#include "vcboot/mean_functions.hpp"
#include "vcboot/rng.hpp"

using namespace vcboot;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Theta m1_theta() {
  Theta theta;
  theta.beta = Eigen::Vector2d(0.0, 7.0);
  theta.lambda = Eigen::Vector2d(std::sqrt(1.3), 0.0).asDiagonal();
  theta.sigma2 = 2.25;
  return theta;
}

Eigen::MatrixXd ramp_design(int J) {
  Eigen::MatrixXd X(J, 1);
  for (int j = 0; j < J; ++j) X(j, 0) = j + 1;
  return X;
}

Theta diag_theta(const Eigen::VectorXd& scales) {
  Theta theta;
  theta.beta = Eigen::VectorXd::Zero(2);
  theta.lambda = scales.asDiagonal();
  theta.sigma2 = 1.0;
  return theta;
}

int count_zeros(const Eigen::MatrixXd& m) {
  int zeros = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      if (m(i, j) == 0.0) ++zeros;
    }
  }
  return zeros;
}

ShrinkPolicy with_c(double c) {
  ShrinkPolicy policy;
  policy.c_n = c;
  return policy;
}

}  // namespace

TEST_SUITE_BEGIN("bootstrap");

TEST_CASE("shrinking zeroes tested rows and small nuisance scales") {
  const Theta theta = diag_theta(Eigen::Vector2d(1.3, 0.1));

  // Tested row goes to zero regardless of the threshold; the surviving
  // scale is kept or dropped depending on its size against c_n.
  Theta kept = shrink_parameter(theta, TestSpec{{2}}, with_c(0.28));
  CHECK(kept.lambda(0, 0) == 1.3);
  CHECK(kept.lambda(1, 1) == 0.0);

  Theta dropped = shrink_parameter(theta, TestSpec{{1}}, with_c(0.28));
  CHECK(dropped.lambda.norm() == 0.0);

  // c_n = 0 is the plain parametric bootstrap generator.
  Theta plain = shrink_parameter(theta, TestSpec{{2}}, with_c(0.0));
  const Theta projected = project_to_null(theta, TestSpec{{2}});
  CHECK((plain.lambda - projected.lambda).norm() == 0.0);
  CHECK(plain.sigma2 == theta.sigma2);
  CHECK((plain.beta - theta.beta).norm() == 0.0);
}

TEST_CASE("a coarse threshold clears mid-sized nuisance entries") {
  Theta theta;
  theta.beta = Eigen::VectorXd::Zero(1);
  theta.lambda = Eigen::Vector3d(1.3, 0.8, 0.5).asDiagonal();
  theta.sigma2 = 2.0;

  const Theta shrunk = shrink_parameter(theta, TestSpec{{3}}, with_c(0.9));
  CHECK(shrunk.lambda(0, 0) == 1.3);
  CHECK(shrunk.lambda(1, 1) == 0.0);
  CHECK(shrunk.lambda(2, 2) == 0.0);
}

TEST_CASE("off-diagonal thresholding can be switched off") {
  Theta theta;
  theta.beta = Eigen::VectorXd::Zero(1);
  theta.lambda = Eigen::MatrixXd::Zero(3, 3);
  theta.lambda(0, 0) = 1.3;
  theta.lambda(1, 0) = 0.2;
  theta.lambda(1, 1) = 1.0;
  theta.lambda(2, 2) = 0.4;
  theta.sigma2 = 1.0;

  ShrinkPolicy both = with_c(0.25);
  const Theta cleared = shrink_parameter(theta, TestSpec{{3}}, both);
  CHECK(cleared.lambda(1, 0) == 0.0);
  CHECK(cleared.lambda(1, 1) == 1.0);

  ShrinkPolicy diag_only = with_c(0.25);
  diag_only.include_offdiagonal = false;
  const Theta kept = shrink_parameter(theta, TestSpec{{3}}, diag_only);
  CHECK(kept.lambda(1, 0) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("shrinking is idempotent and monotone in the threshold") {
  std::mt19937_64 rng = make_engine(97);
  std::normal_distribution<double> normal;
  const TestSpec spec{{3}};
  for (int rep = 0; rep < 50; ++rep) {
    Theta theta;
    theta.beta = Eigen::VectorXd::Zero(2);
    theta.lambda = Eigen::MatrixXd::Zero(3, 3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < i; ++j) theta.lambda(i, j) = 0.5 * normal(rng);
      theta.lambda(i, i) = std::abs(normal(rng));
    }
    theta.sigma2 = 1.0 + std::abs(normal(rng));

    const Theta fine = shrink_parameter(theta, spec, with_c(0.1));
    const Theta coarse = shrink_parameter(theta, spec, with_c(0.3));
    const Theta refine = shrink_parameter(fine, spec, with_c(0.1));
    // Idempotent up to the roundoff of refolding the factor.
    CHECK((fine.lambda - refine.lambda).norm() < 1e-12);
    CHECK(count_zeros(coarse.lambda) >= count_zeros(fine.lambda));

    for (const Theta* out : {&fine, &coarse}) {
      CHECK_NOTHROW(validate(*out));
      const Theta null_point = project_to_null(*out, spec);
      CHECK((out->lambda - null_point.lambda).norm() == 0.0);
    }
  }
}

TEST_CASE("the default threshold schedule decays at the advertised rate") {
  CHECK(default_shrink(20) == doctest::Approx(0.2746401358).epsilon(1e-3));
  CHECK(default_shrink(40) ==
        doctest::Approx(0.23908812494750922).epsilon(1e-12));
  CHECK(default_shrink(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(default_shrink(1000000) < 0.04);
  CHECK(default_shrink(100) > default_shrink(1000));

  // Slower than the fourth-root estimation rate at the boundary: the
  // threshold eats estimation noise but not genuine signal.
  auto scaled = [](int n) {
    return std::pow(n, 0.25) * default_shrink(n);
  };
  CHECK(scaled(100) < scaled(10000));
  CHECK(scaled(10000) < scaled(1000000));

  CHECK_THROWS_AS(default_shrink(0), ConfigError);
}

TEST_CASE("likelihood ratio statistic clamps at zero") {
  CHECK(lrt_statistic(-5.0, -5.0) == 0.0);
  CHECK(lrt_statistic(-3.0, -4.92) == doctest::Approx(3.84).epsilon(1e-12));
  CHECK(lrt_statistic(-6.0, -5.0) == 0.0);
  CHECK_THROWS_AS(lrt_statistic(kNaN, 0.0), ConfigError);
  CHECK_THROWS_AS(
      lrt_statistic(std::numeric_limits<double>::infinity(), 0.0),
      ConfigError);
}

TEST_CASE("bootstrap p-value is the strict exceedance fraction") {
  CHECK(bootstrap_pvalue(5.0, {1.0, 2.0, 3.0, 4.0}) == 0.0);
  CHECK(bootstrap_pvalue(0.0, {0.0, 0.0, 0.0}) == 0.0);
  CHECK(bootstrap_pvalue(2.0, {1.0, 3.0, 5.0, 7.0}) == 0.75);
  CHECK(bootstrap_pvalue(2.0, {1.0, kNaN, 3.0, 5.0, 7.0}) == 0.75);
  CHECK(bootstrap_pvalue(0.0, {1.0, 2.0}) == 1.0);
  CHECK_THROWS_AS(bootstrap_pvalue(2.0, {}), ConfigError);
  CHECK_THROWS_AS(bootstrap_pvalue(2.0, {kNaN, kNaN}), ConfigError);
  CHECK_THROWS_AS(bootstrap_pvalue(-1.0, {1.0}), ConfigError);
}

TEST_CASE("asymptotic reference is the half-and-half mixture") {
  CHECK(asymptotic_pvalue_single(0.0) == 1.0);
  CHECK(asymptotic_pvalue_single(3.8415) ==
        doctest::Approx(0.024999386).epsilon(1e-4));
  CHECK(asymptotic_pvalue_single(2.7055) ==
        doctest::Approx(0.050001362).epsilon(1e-4));
  CHECK(asymptotic_pvalue_single(1e-12) ==
        doctest::Approx(0.5).epsilon(1e-5));
  double last = 1.0;
  for (double t : {0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double p = asymptotic_pvalue_single(t);
    CHECK(p < last);
    last = p;
  }
  CHECK_THROWS_AS(asymptotic_pvalue_single(-0.1), ConfigError);
}

TEST_CASE("the full test runs and reruns bit-identically") {
  const ModelSpec model = linear_model({0, 1}, {0, 1});
  std::mt19937_64 rng = make_engine(811);
  const std::vector<Eigen::MatrixXd> designs(8, ramp_design(5));
  const Dataset data = simulate_dataset(model, m1_theta(), designs, rng);

  FitOptions fit;
  fit.n_starts = 2;
  fit.tight_polish = false;
  ShrinkPolicy policy = with_c(default_shrink(8));
  BootstrapOptions boot;
  boot.n_replicates = 20;
  boot.seed = 99;

  const BootstrapResult a =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, policy, boot);
  const BootstrapResult b =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, policy, boot);
  CHECK(a.p_boot == b.p_boot);
  CHECK(a.lrt_obs == b.lrt_obs);
  REQUIRE(a.lrt_star.size() == 20);
  for (std::size_t i = 0; i < a.lrt_star.size(); ++i) {
    CHECK(a.lrt_star[i] == b.lrt_star[i]);
  }

  BootstrapOptions threaded = boot;
  threaded.workers = 3;
  const BootstrapResult c =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, policy, threaded);
  CHECK(c.p_boot == a.p_boot);
  for (std::size_t i = 0; i < a.lrt_star.size(); ++i) {
    CHECK(c.lrt_star[i] == a.lrt_star[i]);
  }

  CHECK(a.b_failed == 0);
  CHECK(a.reliable);
  CHECK(a.p_boot == bootstrap_pvalue(a.lrt_obs, a.lrt_star));

  // The generator parameter the replicates were drawn from is a valid
  // null-space point.
  CHECK_NOTHROW(validate(a.theta_star));
  const Theta null_point = project_to_null(a.theta_star, TestSpec{{2}});
  CHECK((a.theta_star.lambda - null_point.lambda).norm() == 0.0);
}

TEST_CASE("precomputed fits shortcut matches the from-scratch path") {
  const ModelSpec model = linear_model({0, 1}, {0, 1});
  std::mt19937_64 rng = make_engine(821);
  const std::vector<Eigen::MatrixXd> designs(8, ramp_design(5));
  const Dataset data = simulate_dataset(model, m1_theta(), designs, rng);

  FitOptions fit;
  fit.n_starts = 2;
  fit.tight_polish = false;
  const ShrinkPolicy policy = with_c(0.2);
  BootstrapOptions boot;
  boot.n_replicates = 15;
  boot.seed = 7;

  const FitPair pair = fit_lrt_pair(model, data, TestSpec{{2}}, {}, fit);
  const BootstrapResult shared =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, policy, boot, pair);
  const BootstrapResult scratch =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, policy, boot);
  CHECK(shared.p_boot == scratch.p_boot);
  CHECK(shared.lrt_obs == scratch.lrt_obs);
  for (std::size_t i = 0; i < shared.lrt_star.size(); ++i) {
    CHECK(shared.lrt_star[i] == scratch.lrt_star[i]);
  }
}

TEST_CASE("a single replicate still yields a degenerate p-value") {
  const ModelSpec model = linear_model({0, 1}, {0, 1});
  std::mt19937_64 rng = make_engine(823);
  const std::vector<Eigen::MatrixXd> designs(6, ramp_design(4));
  const Dataset data = simulate_dataset(model, m1_theta(), designs, rng);

  FitOptions fit;
  fit.n_starts = 1;
  fit.tight_polish = false;
  BootstrapOptions boot;
  boot.n_replicates = 1;
  const BootstrapResult r =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, with_c(0.0), boot);
  CHECK((r.p_boot == 0.0 || r.p_boot == 1.0));
}

TEST_CASE("seeding from the unrestricted fit is supported") {
  const ModelSpec model = linear_model({0, 1}, {0, 1});
  std::mt19937_64 rng = make_engine(827);
  const std::vector<Eigen::MatrixXd> designs(8, ramp_design(5));
  const Dataset data = simulate_dataset(model, m1_theta(), designs, rng);

  FitOptions fit;
  fit.n_starts = 2;
  fit.tight_polish = false;
  ShrinkPolicy policy = with_c(0.2);
  policy.seed_from_unrestricted = true;
  BootstrapOptions boot;
  boot.n_replicates = 10;

  const BootstrapResult r =
      bootstrap_test(model, data, TestSpec{{2}}, {}, fit, policy, boot);
  CHECK_NOTHROW(validate(r.theta_star));
  CHECK(r.theta_star.lambda(1, 0) == 0.0);
  CHECK(r.theta_star.lambda(1, 1) == 0.0);
}

TEST_SUITE_END();
