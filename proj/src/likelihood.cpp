#include "vcboot/likelihood.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <sstream>

#include "vcboot/gauss_hermite.hpp"
#include "vcboot/rng.hpp"

namespace vcboot {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_sum_exp(const std::vector<double>& terms) {
  double m = -std::numeric_limits<double>::infinity();
  for (double t : terms) m = std::max(m, t);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - m);
  return m + std::log(acc);
}

// Gaussian log-density of the residual vector r with variance sigma2 per
// coordinate.
double gaussian_loglik(const Eigen::VectorXd& r, double sigma2) {
  const double n = static_cast<double>(r.size());
  return -0.5 * (n * (kLog2Pi + std::log(sigma2)) + r.squaredNorm() / sigma2);
}

// ---------------------------------------------------------------------------
// Closed form for means linear in the random effect
// ---------------------------------------------------------------------------

// With g(x, beta, s) affine in s, the implied per-individual model is
// y ~ N(mu, Z Gamma Z^T + sigma2 I) where mu = g(x, beta, 0) and column k of
// Z is g(x, beta, e_k) - mu.  Individuals sharing a design share mu, Z and
// the factorized covariance.
struct LinearGroup {
  Eigen::VectorXd mu;
  Eigen::LLT<Eigen::MatrixXd> llt;
  double logdet = 0.0;
};

LinearGroup make_linear_group(const ModelSpec& model, const Individual& ind,
                              const Theta& theta,
                              const Eigen::MatrixXd& gamma) {
  const int p = theta.n_effects();
  LinearGroup group;
  mean_eval_batch(model, ind.x, theta.beta, Eigen::VectorXd::Zero(p),
                  group.mu);
  Eigen::MatrixXd Z(ind.x.rows(), p);
  Eigen::VectorXd column(ind.x.rows());
  for (int k = 0; k < p; ++k) {
    mean_eval_batch(model, ind.x, theta.beta, Eigen::VectorXd::Unit(p, k),
                    column);
    Z.col(k) = column - group.mu;
  }
  Eigen::MatrixXd Sigma = Z * gamma * Z.transpose();
  Sigma.diagonal().array() += theta.sigma2;
  group.llt.compute(Sigma);
  if (group.llt.info() != Eigen::Success) {
    throw EvalError("loglik: marginal covariance is not positive definite");
  }
  group.logdet =
      2.0 * group.llt.matrixLLT().diagonal().array().log().sum();
  return group;
}

double linear_individual_loglik(const LinearGroup& group,
                                const Individual& ind) {
  const Eigen::VectorXd r = ind.y - group.mu;
  const double quad_form = r.dot(group.llt.solve(r));
  const double n = static_cast<double>(ind.y.size());
  return -0.5 * (n * kLog2Pi + group.logdet + quad_form);
}

bool same_design(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

void group_designs(const Dataset& data, std::vector<int>& group_of,
                   std::vector<int>& rep) {
  group_of.resize(data.individuals.size());
  rep.clear();
  for (std::size_t i = 0; i < data.individuals.size(); ++i) {
    int g = -1;
    for (std::size_t j = 0; j < rep.size(); ++j) {
      if (same_design(data.individuals[rep[j]].x, data.individuals[i].x)) {
        g = static_cast<int>(j);
        break;
      }
    }
    if (g < 0) {
      g = static_cast<int>(rep.size());
      rep.push_back(static_cast<int>(i));
    }
    group_of[i] = g;
  }
}

double linear_loglik(const ModelSpec& model, const Dataset& data,
                     const Theta& theta, LoglikCache* cache) {
  // Group individuals with identical covariate matrices so the covariance
  // factorization is done once per distinct design.  The grouping depends
  // only on the dataset, so a cache keeps it across calls.
  std::vector<int> scratch_of;
  std::vector<int> scratch_rep;
  std::vector<int>* group_of = cache ? &cache->group_of : &scratch_of;
  std::vector<int>* rep = cache ? &cache->group_rep : &scratch_rep;
  if (group_of->size() != data.individuals.size()) {
    group_designs(data, *group_of, *rep);
  }
  const Eigen::MatrixXd gamma = gamma_of(theta);
  std::vector<LinearGroup> groups;
  groups.reserve(rep->size());
  for (int r : *rep) {
    groups.push_back(
        make_linear_group(model, data.individuals[r], theta, gamma));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < data.individuals.size(); ++i) {
    total += linear_individual_loglik(groups[(*group_of)[i]],
                                      data.individuals[i]);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Hermite for the general case
// ---------------------------------------------------------------------------

struct ModeResult {
  Eigen::VectorXd xi;            // conditional mode over active dimensions
  Eigen::MatrixXd hessian;       // J^T J / sigma2 + I at the mode (SPD)
  double value = 0.0;            // h(xi)
};

// Joint log-density h(xi) = log f(y | xi) + log prior(xi) over the active
// dimensions, with the inactive ones integrated out exactly.
double joint_logdensity(const ModelSpec& model, const Individual& ind,
                        const Theta& theta, const Eigen::MatrixXd& lam_active,
                        const Eigen::VectorXd& xi, Eigen::VectorXd& g_buf) {
  const double q = static_cast<double>(xi.size());
  mean_eval_batch(model, ind.x, theta.beta, lam_active * xi, g_buf);
  return gaussian_loglik(ind.y - g_buf, theta.sigma2) -
         0.5 * (q * kLog2Pi + xi.squaredNorm());
}

// Jacobian of the mean in the active effect coordinates.  Exact (one batch
// evaluation per dimension) when the model is linear in the effects;
// forward differences otherwise.
void mean_jacobian(const ModelSpec& model, const Individual& ind,
                   const Theta& theta, const Eigen::MatrixXd& lam_active,
                   const Eigen::VectorXd& xi, const Eigen::VectorXd& g0,
                   Eigen::MatrixXd& jac, Eigen::VectorXd& g_buf) {
  const int q = static_cast<int>(xi.size());
  if (model.mean_jacobian_s) {
    // Chain rule through s = lam_active * xi.
    Eigen::MatrixXd jac_s;
    model.mean_jacobian_s(ind.x, theta.beta, lam_active * xi, jac_s);
    if (jac_s.rows() != ind.y.size() ||
        jac_s.cols() != lam_active.rows()) {
      throw EvalError("loglik: mean_jacobian_s returned the wrong shape");
    }
    if (!jac_s.allFinite()) {
      throw EvalError("loglik: mean_jacobian_s returned non-finite values");
    }
    jac = jac_s * lam_active;
    return;
  }
  jac.resize(ind.y.size(), q);
  for (int d = 0; d < q; ++d) {
    if (model.linear_in_effects) {
      mean_eval_batch(model, ind.x, theta.beta,
                      lam_active * (xi + Eigen::VectorXd::Unit(q, d)), g_buf);
      jac.col(d) = g_buf - g0;
    } else {
      const double h = 1e-6 * std::max(1.0, std::abs(xi[d]));
      mean_eval_batch(model, ind.x, theta.beta,
                      lam_active * (xi + h * Eigen::VectorXd::Unit(q, d)),
                      g_buf);
      jac.col(d) = (g_buf - g0) / h;
    }
  }
}

// Damped Gauss-Newton ascent of the joint log-density.  The Gauss-Newton
// Hessian J^T J / sigma2 + I is positive definite by construction and is
// exactly the negative Hessian when the mean is linear in the effects, so
// linear models converge in one step.
ModeResult find_mode(const ModelSpec& model, const Individual& ind,
                     const Theta& theta, const Eigen::MatrixXd& lam_active,
                     const QuadratureConfig& quad,
                     const Eigen::VectorXd& warm_start) {
  ModeResult mode;
  mode.xi = warm_start;
  Eigen::VectorXd g_buf(ind.y.size());
  Eigen::VectorXd trial_buf(ind.y.size());
  mode.value = joint_logdensity(model, ind, theta, lam_active, mode.xi, g_buf);
  if (!std::isfinite(mode.value) && !warm_start.isZero()) {
    mode.xi.setZero();
    mode.value =
        joint_logdensity(model, ind, theta, lam_active, mode.xi, g_buf);
  }
  Eigen::MatrixXd jac;
  for (int iter = 0; iter < quad.max_mode_iter; ++iter) {
    mean_jacobian(model, ind, theta, lam_active, mode.xi, g_buf, jac,
                  trial_buf);
    const Eigen::VectorXd grad =
        jac.transpose() * (ind.y - g_buf) / theta.sigma2 - mode.xi;
    mode.hessian = jac.transpose() * jac / theta.sigma2;
    mode.hessian.diagonal().array() += 1.0;
    Eigen::VectorXd step = mode.hessian.llt().solve(grad);
    if (!step.allFinite()) break;
    if (step.lpNorm<Eigen::Infinity>() < quad.mode_tol) break;
    double alpha = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 25; ++halving) {
      const Eigen::VectorXd candidate = mode.xi + alpha * step;
      const double value =
          joint_logdensity(model, ind, theta, lam_active, candidate, g_buf);
      if (std::isfinite(value) && value > mode.value) {
        mode.xi = candidate;
        mode.value = value;
        improved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!improved) break;
  }
  return mode;
}

double quadrature_individual_loglik(const ModelSpec& model,
                                    const Individual& ind, const Theta& theta,
                                    const QuadratureConfig& quad,
                                    const std::vector<int>& active,
                                    Eigen::VectorXd* warm_mode) {
  const int p = theta.n_effects();
  const int q = static_cast<int>(active.size());
  Eigen::VectorXd g_buf(ind.y.size());

  if (q == 0) {
    mean_eval_batch(model, ind.x, theta.beta, Eigen::VectorXd::Zero(p), g_buf);
    return gaussian_loglik(ind.y - g_buf, theta.sigma2);
  }

  Eigen::MatrixXd lam_active(p, q);
  for (int d = 0; d < q; ++d) lam_active.col(d) = theta.lambda.col(active[d]);

  const GaussHermiteRule& rule = gauss_hermite(quad.n_nodes);
  double grid_size = 1.0;
  for (int d = 0; d < q; ++d) {
    grid_size *= quad.n_nodes;
    if (grid_size > static_cast<double>(quad.max_tensor_nodes)) {
      std::ostringstream msg;
      msg << "loglik: tensor grid with " << q << " active dimensions and "
          << quad.n_nodes << " nodes exceeds max_tensor_nodes = "
          << quad.max_tensor_nodes;
      throw ConfigError(msg.str());
    }
  }
  const long n_grid = static_cast<long>(grid_size);

  // Center m and transform T = sqrt(2) L^{-T}: the grid point for tensor
  // node t is xi = m + T t, which rescales the rule to the curvature of the
  // integrand at its mode.  Non-adaptive keeps m = 0, T = sqrt(2) I.
  Eigen::VectorXd center = Eigen::VectorXd::Zero(q);
  Eigen::MatrixXd transform =
      std::sqrt(2.0) * Eigen::MatrixXd::Identity(q, q);
  double half_logdet_scaled = 0.5 * q * std::log(2.0);
  if (quad.adaptive) {
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(q);
    if (warm_mode && warm_mode->size() == p) {
      for (int d = 0; d < q; ++d) warm[d] = (*warm_mode)[active[d]];
    }
    const ModeResult mode =
        find_mode(model, ind, theta, lam_active, quad, warm);
    const Eigen::MatrixXd L =
        mode.hessian.llt().matrixL();
    center = mode.xi;
    transform = std::sqrt(2.0) *
                L.transpose().triangularView<Eigen::Upper>().solve(
                    Eigen::MatrixXd::Identity(q, q));
    half_logdet_scaled = 0.5 * q * std::log(2.0) -
                         L.diagonal().array().log().sum();
    if (warm_mode) {
      if (warm_mode->size() != p) *warm_mode = Eigen::VectorXd::Zero(p);
      for (int d = 0; d < q; ++d) (*warm_mode)[active[d]] = mode.xi[d];
    }
  }

  std::vector<double> terms;
  terms.reserve(n_grid);
  std::vector<int> digits(q, 0);
  Eigen::VectorXd t(q);
  for (long node = 0; node < n_grid; ++node) {
    double log_weight = 0.0;
    for (int d = 0; d < q; ++d) {
      t[d] = rule.nodes[digits[d]];
      log_weight += rule.log_weights[digits[d]];
    }
    const Eigen::VectorXd xi = center + transform * t;
    const double h =
        joint_logdensity(model, ind, theta, lam_active, xi, g_buf);
    terms.push_back(log_weight + h + t.squaredNorm());
    for (int d = 0; d < q; ++d) {
      if (++digits[d] < quad.n_nodes) break;
      digits[d] = 0;
    }
  }
  return half_logdet_scaled + log_sum_exp(terms);
}

double monte_carlo_individual_loglik(const ModelSpec& model,
                                     const Individual& ind,
                                     const Theta& theta,
                                     const QuadratureConfig& quad,
                                     int individual_index) {
  const int p = theta.n_effects();
  // Fixed per-individual stream: the same seed always yields the same
  // draws, so estimates are comparable across theta values.
  std::mt19937_64 rng(mix_seed(quad.mc_seed, individual_index));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd xi(p);
  Eigen::VectorXd g_buf(ind.y.size());
  std::vector<double> terms;
  terms.reserve(quad.mc_draws);
  for (int s = 0; s < quad.mc_draws; ++s) {
    for (int k = 0; k < p; ++k) xi[k] = normal(rng);
    mean_eval_batch(model, ind.x, theta.beta, theta.lambda * xi, g_buf);
    terms.push_back(gaussian_loglik(ind.y - g_buf, theta.sigma2));
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(quad.mc_draws));
}

double dispatch_individual(const ModelSpec& model, const Individual& ind,
                           const Theta& theta, const QuadratureConfig& quad,
                           const std::vector<int>& active,
                           Eigen::VectorXd* warm_mode, int individual_index) {
  if (quad.use_monte_carlo) {
    return monte_carlo_individual_loglik(model, ind, theta, quad,
                                         individual_index);
  }
  return quadrature_individual_loglik(model, ind, theta, quad, active,
                                      warm_mode);
}

}  // namespace

void validate(const QuadratureConfig& quad) {
  if (quad.n_nodes < 1) {
    throw ConfigError("quadrature: n_nodes must be at least 1");
  }
  if (quad.mc_draws < 1) {
    throw ConfigError("quadrature: mc_draws must be at least 1");
  }
  if (quad.mode_tol <= 0.0 || quad.max_mode_iter < 1) {
    throw ConfigError("quadrature: invalid mode search controls");
  }
  if (quad.max_tensor_nodes < 1) {
    throw ConfigError("quadrature: max_tensor_nodes must be positive");
  }
}

std::vector<int> active_effects(const Theta& theta) {
  const int p = theta.n_effects();
  std::vector<int> active;
  for (int k = 0; k < p; ++k) {
    if ((theta.lambda.col(k).array() != 0.0).any()) active.push_back(k);
  }
  return active;
}

double loglik(const ModelSpec& model, const Dataset& data, const Theta& theta,
              const QuadratureConfig& quad, LoglikCache* cache) {
  validate(model);
  validate(data);
  validate(theta);
  validate(quad);
  if (theta.n_fixed() != model.n_fixed ||
      theta.n_effects() != model.n_effects) {
    throw ConfigError("loglik: theta dimensions do not match the model");
  }

  if (model.linear_in_effects && !quad.use_monte_carlo) {
    return linear_loglik(model, data, theta, cache);
  }

  const std::vector<int> active = active_effects(theta);
  if (cache && cache->modes.size() != data.individuals.size()) {
    cache->modes.assign(data.individuals.size(), Eigen::VectorXd());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < data.individuals.size(); ++i) {
    Eigen::VectorXd* warm = cache ? &cache->modes[i] : nullptr;
    try {
      total += dispatch_individual(model, data.individuals[i], theta, quad,
                                   active, warm, static_cast<int>(i));
    } catch (const EvalError& e) {
      throw EvalError("individual '" + data.individuals[i].id +
                      "': " + e.what());
    }
  }
  return total;
}

double individual_loglik(const ModelSpec& model, const Individual& ind,
                         const Theta& theta, const QuadratureConfig& quad) {
  Dataset single;
  single.individuals.push_back(ind);
  return loglik(model, single, theta, quad, nullptr);
}

Dataset simulate_dataset(const ModelSpec& model, const Theta& theta,
                         const std::vector<Eigen::MatrixXd>& designs,
                         std::mt19937_64& rng) {
  validate(model);
  validate(theta, /*allow_zero_sigma2=*/true);
  if (designs.empty()) {
    throw ConfigError("simulate_dataset: no designs given");
  }
  const int p = theta.n_effects();
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = std::sqrt(theta.sigma2);
  Dataset data;
  data.individuals.reserve(designs.size());
  Eigen::VectorXd xi(p);
  for (std::size_t i = 0; i < designs.size(); ++i) {
    Individual ind;
    ind.id = std::to_string(i + 1);
    ind.x = designs[i];
    for (int k = 0; k < p; ++k) xi[k] = normal(rng);
    Eigen::VectorXd mean;
    mean_eval_batch(model, ind.x, theta.beta, theta.lambda * xi, mean);
    ind.y.resize(mean.size());
    for (Eigen::Index j = 0; j < mean.size(); ++j) {
      ind.y[j] = mean[j] + sigma * normal(rng);
    }
    data.individuals.push_back(std::move(ind));
  }
  validate(data);
  return data;
}

std::vector<Eigen::MatrixXd> designs_of(const Dataset& data) {
  std::vector<Eigen::MatrixXd> designs;
  designs.reserve(data.individuals.size());
  for (const auto& ind : data.individuals) designs.push_back(ind.x);
  return designs;
}

}  // namespace vcboot
