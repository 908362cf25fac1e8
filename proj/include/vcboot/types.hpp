#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcboot {

// Configuration problems (bad dimensions, malformed specs, unparsable input).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A mean function or density evaluation produced a non-finite value.
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An optimizer or resampling procedure failed beyond recovery.
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Smallest residual variance the code will accept; keeps every Gaussian
// density and conditional-mode Hessian well defined.
inline constexpr double kSigma2Floor = 1e-6;

// ---------------------------------------------------------------------------
// Model parameter
// ---------------------------------------------------------------------------

// theta = (beta, lambda, sigma2).  lambda is the p x p lower-triangular
// factor of the random-effect covariance Gamma = lambda * lambda^T, with
// nonnegative diagonal so the factorization is unique when Gamma is
// positive definite.
struct Theta {
  Eigen::VectorXd beta;
  Eigen::MatrixXd lambda;
  double sigma2 = 1.0;

  int n_effects() const { return static_cast<int>(lambda.rows()); }
  int n_fixed() const { return static_cast<int>(beta.size()); }
};

// Throws ConfigError unless lambda is square lower-triangular with
// nonnegative diagonal, sigma2 >= kSigma2Floor, and all entries are finite.
// allow_zero_sigma2 relaxes the floor to admit exactly noise-free models,
// which only simulation supports.
void validate(const Theta& theta, bool allow_zero_sigma2 = false);

// Random-effect covariance Gamma = lambda * lambda^T.
Eigen::MatrixXd gamma_of(const Theta& theta);

// ---------------------------------------------------------------------------
// Hypothesis
// ---------------------------------------------------------------------------

// Rows of lambda whose variance contribution is tested against zero.
// Indices are 1-based, matching how effects are usually numbered in
// model writeups.
struct TestSpec {
  std::vector<int> tested_rows;
};

// Throws ConfigError unless tested_rows is a nonempty duplicate-free
// subset of {1, ..., p}.
void validate(const TestSpec& spec, int p);

// Sorted 0-based complements of the tested set.
std::vector<int> tested_index(const TestSpec& spec, int p);
std::vector<int> untested_index(const TestSpec& spec, int p);

// Null-hypothesis projection: every tested row of lambda is set to zero
// (diagonal and off-diagonal alike), so the corresponding rows and columns
// of Gamma vanish.  beta and sigma2 pass through unchanged.
Theta project_to_null(const Theta& theta, const TestSpec& spec);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

// One individual: response vector y (length J_i) and covariate matrix x
// with one row per observation.  All individuals in a dataset share the
// covariate count, but J_i may vary.
struct Individual {
  std::string id;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
};

struct Dataset {
  std::vector<Individual> individuals;

  int n_individuals() const { return static_cast<int>(individuals.size()); }
  int n_obs() const;
};

// Throws ConfigError unless the dataset is nonempty, every individual has
// y.size() == x.rows() >= 1, covariate counts agree, and values are finite.
void validate(const Dataset& data);

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

// Mean function g(x, beta, s) evaluated at one observation.  s = lambda * xi
// is the realized random effect on the model scale.
using MeanFn = std::function<double(const Eigen::VectorXd& x,
                                    const Eigen::VectorXd& beta,
                                    const Eigen::VectorXd& s)>;

// Optional batched form: fill out[j] = g(X.row(j), beta, s) for every row of
// X.  Lets vector-heavy means (logistic curves and friends) amortize exp().
using MeanBatchFn = std::function<void(const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& beta,
                                       const Eigen::VectorXd& s,
                                       Eigen::VectorXd& out)>;

struct ModelSpec {
  std::string name;
  int n_fixed = 0;    // length of beta
  int n_effects = 0;  // dimension p of the random effect
  MeanFn mean;
  MeanBatchFn mean_batch;  // optional; derived from `mean` when absent
  // When true the mean is affine in s for every fixed (x, beta) and the
  // marginal likelihood has a closed Gaussian form.
  bool linear_in_effects = false;
  // Optional exact Jacobian of the mean in the effect coordinates:
  // out(j, k) = d g(x_j, beta, s) / d s_k.  The conditional-mode search
  // falls back to forward differences when absent.
  std::function<void(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                     const Eigen::VectorXd&, Eigen::MatrixXd&)>
      mean_jacobian_s;
  // Optional data-driven starting value for beta.
  std::function<Eigen::VectorXd(const Dataset&)> init_beta;
};

void validate(const ModelSpec& model);

// Checked single-observation evaluation; throws EvalError on non-finite g.
double mean_eval(const ModelSpec& model, const Eigen::VectorXd& x,
                 const Eigen::VectorXd& beta, const Eigen::VectorXd& s);

// Checked batched evaluation into a caller-owned buffer.
void mean_eval_batch(const ModelSpec& model, const Eigen::MatrixXd& X,
                     const Eigen::VectorXd& beta, const Eigen::VectorXd& s,
                     Eigen::VectorXd& out);

// ---------------------------------------------------------------------------
// Shared numeric helpers
// ---------------------------------------------------------------------------

// Cholesky factor of a symmetric positive *semi*definite matrix: returns
// lower-triangular L with nonnegative diagonal and L L^T = A.  Columns hit
// by a zero pivot are zeroed instead of failing.  Throws EvalError when A
// has a clearly negative pivot (not PSD).
Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& A);

}  // namespace vcboot
