#include "vcboot/mean_functions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace vcboot {

namespace {

void check_columns(const std::vector<int>& cols, const char* what) {
  for (int c : cols) {
    if (c < 0) {
      throw ConfigError(std::string(what) +
                        ": feature indices must be nonnegative "
                        "(0 = intercept, k = covariate k)");
    }
  }
}

int max_column(const std::vector<int>& a, const std::vector<int>& b) {
  int m = 0;
  for (int c : a) m = std::max(m, c);
  for (int c : b) m = std::max(m, c);
  return m;
}

void add_features(const Eigen::MatrixXd& X, const std::vector<int>& cols,
                  const Eigen::VectorXd& coef, Eigen::VectorXd& out) {
  for (std::size_t a = 0; a < cols.size(); ++a) {
    if (cols[a] == 0) {
      out.array() += coef[a];
    } else {
      out += coef[a] * X.col(cols[a] - 1);
    }
  }
}

}  // namespace

ModelSpec linear_model(std::vector<int> beta_cols, std::vector<int> s_cols,
                       std::string name) {
  check_columns(beta_cols, "linear_model beta_cols");
  check_columns(s_cols, "linear_model s_cols");
  if (s_cols.empty()) {
    throw ConfigError("linear_model: need at least one random-effect column");
  }
  const int needed = max_column(beta_cols, s_cols);

  ModelSpec model;
  model.name = std::move(name);
  model.n_fixed = static_cast<int>(beta_cols.size());
  model.n_effects = static_cast<int>(s_cols.size());
  model.linear_in_effects = true;
  model.mean_batch = [beta_cols, s_cols, needed](
                         const Eigen::MatrixXd& X, const Eigen::VectorXd& beta,
                         const Eigen::VectorXd& s, Eigen::VectorXd& out) {
    if (X.cols() < needed) {
      throw ConfigError("linear_model: dataset has fewer covariates than "
                        "the model uses");
    }
    out.setZero(X.rows());
    add_features(X, beta_cols, beta, out);
    add_features(X, s_cols, s, out);
  };
  model.mean = [batch = model.mean_batch](const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& beta,
                                          const Eigen::VectorXd& s) {
    Eigen::VectorXd out(1);
    batch(x.transpose(), beta, s, out);
    return out[0];
  };
  model.init_beta = [beta_cols](const Dataset& data) {
    const int b = static_cast<int>(beta_cols.size());
    if (b == 0) return Eigen::VectorXd();
    Eigen::MatrixXd F(data.n_obs(), b);
    Eigen::VectorXd y(data.n_obs());
    Eigen::Index row = 0;
    for (const auto& ind : data.individuals) {
      for (Eigen::Index j = 0; j < ind.y.size(); ++j, ++row) {
        for (int a = 0; a < b; ++a) {
          F(row, a) = beta_cols[a] == 0 ? 1.0 : ind.x(j, beta_cols[a] - 1);
        }
        y[row] = ind.y[j];
      }
    }
    return Eigen::VectorXd(F.colPivHouseholderQr().solve(y));
  };
  return model;
}

ModelSpec logistic_model(int t_col, std::string name) {
  if (t_col < 1) {
    throw ConfigError("logistic_model: t_col is a 1-based covariate index");
  }
  ModelSpec model;
  model.name = std::move(name);
  model.n_fixed = 3;
  model.n_effects = 3;
  model.linear_in_effects = false;
  model.mean_batch = [t_col](const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& beta,
                             const Eigen::VectorXd& s, Eigen::VectorXd& out) {
    if (X.cols() < t_col) {
      throw ConfigError("logistic_model: dataset lacks the time covariate");
    }
    const double asymptote = beta[0] + s[0];
    const double midpoint = beta[1] + s[1];
    const double scale = beta[2] + s[2];
    out = asymptote /
          (((midpoint - X.col(t_col - 1).array()) / scale).exp() + 1.0);
  };
  model.mean = [batch = model.mean_batch](const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& beta,
                                          const Eigen::VectorXd& s) {
    Eigen::VectorXd out(1);
    batch(x.transpose(), beta, s, out);
    return out[0];
  };
  model.mean_jacobian_s = [t_col](const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& beta,
                                  const Eigen::VectorXd& s,
                                  Eigen::MatrixXd& out) {
    if (X.cols() < t_col) {
      throw ConfigError("logistic_model: dataset lacks the time covariate");
    }
    const double asymptote = beta[0] + s[0];
    const double midpoint = beta[1] + s[1];
    const double scale = beta[2] + s[2];
    const auto t = X.col(t_col - 1).array();
    const Eigen::ArrayXd curve = 1.0 / (((midpoint - t) / scale).exp() + 1.0);
    // With F the curve value, dF/dmidpoint = -F (1 - F) / scale and
    // dF/dscale = -F (1 - F) (t - midpoint) / scale^2.
    const Eigen::ArrayXd slope = curve * (1.0 - curve) * (asymptote / scale);
    out.resize(X.rows(), 3);
    out.col(0) = curve;
    out.col(1) = -slope;
    out.col(2) = -slope * (t - midpoint) / scale;
  };
  model.init_beta = [t_col](const Dataset& data) {
    // Crude curve read-off: asymptote from the largest response, midpoint
    // from the observation nearest half of it, scale from the time range.
    double y_max = data.individuals.front().y[0];
    double t_min = data.individuals.front().x(0, t_col - 1);
    double t_max = t_min;
    for (const auto& ind : data.individuals) {
      y_max = std::max(y_max, ind.y.maxCoeff());
      t_min = std::min(t_min, ind.x.col(t_col - 1).minCoeff());
      t_max = std::max(t_max, ind.x.col(t_col - 1).maxCoeff());
    }
    double mid = 0.5 * (t_min + t_max);
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& ind : data.individuals) {
      for (Eigen::Index j = 0; j < ind.y.size(); ++j) {
        const double gap = std::abs(ind.y[j] - 0.5 * y_max);
        if (gap < best_gap) {
          best_gap = gap;
          mid = ind.x(j, t_col - 1);
        }
      }
    }
    Eigen::VectorXd beta(3);
    beta << y_max, mid, std::max((t_max - t_min) / 4.0, 1e-3);
    return beta;
  };
  return model;
}

}  // namespace vcboot
