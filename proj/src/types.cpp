#include "vcboot/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vcboot {

namespace {

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace

void validate(const Theta& theta, bool allow_zero_sigma2) {
  const auto p = theta.lambda.rows();
  if (p == 0 || theta.lambda.cols() != p) {
    throw ConfigError("theta: lambda must be a nonempty square matrix");
  }
  if (!all_finite(theta.lambda) || !theta.beta.allFinite()) {
    throw ConfigError("theta: non-finite entry in beta or lambda");
  }
  for (Eigen::Index i = 0; i < p; ++i) {
    if (theta.lambda(i, i) < 0.0) {
      throw ConfigError("theta: lambda diagonal must be nonnegative");
    }
    for (Eigen::Index j = i + 1; j < p; ++j) {
      if (theta.lambda(i, j) != 0.0) {
        throw ConfigError("theta: lambda must be lower triangular");
      }
    }
  }
  const double floor = allow_zero_sigma2 ? 0.0 : kSigma2Floor;
  if (!std::isfinite(theta.sigma2) || theta.sigma2 < floor) {
    std::ostringstream msg;
    msg << "theta: sigma2 = " << theta.sigma2 << " is below the floor "
        << floor;
    throw ConfigError(msg.str());
  }
}

Eigen::MatrixXd gamma_of(const Theta& theta) {
  return theta.lambda * theta.lambda.transpose();
}

void validate(const TestSpec& spec, int p) {
  if (spec.tested_rows.empty()) {
    throw ConfigError("test spec: tested_rows must be nonempty");
  }
  std::vector<int> rows = spec.tested_rows;
  std::sort(rows.begin(), rows.end());
  if (std::adjacent_find(rows.begin(), rows.end()) != rows.end()) {
    throw ConfigError("test spec: tested_rows contains duplicates");
  }
  if (rows.front() < 1 || rows.back() > p) {
    std::ostringstream msg;
    msg << "test spec: tested_rows must lie in 1.." << p;
    throw ConfigError(msg.str());
  }
}

std::vector<int> tested_index(const TestSpec& spec, int p) {
  validate(spec, p);
  std::vector<int> idx;
  idx.reserve(spec.tested_rows.size());
  for (int r : spec.tested_rows) idx.push_back(r - 1);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> untested_index(const TestSpec& spec, int p) {
  const std::vector<int> tested = tested_index(spec, p);
  std::vector<int> idx;
  idx.reserve(p - tested.size());
  for (int i = 0; i < p; ++i) {
    if (!std::binary_search(tested.begin(), tested.end(), i)) idx.push_back(i);
  }
  return idx;
}

Theta project_to_null(const Theta& theta, const TestSpec& spec) {
  validate(theta);
  Theta null_theta = theta;
  for (int i : tested_index(spec, theta.n_effects())) {
    null_theta.lambda.row(i).setZero();
  }
  return null_theta;
}

int Dataset::n_obs() const {
  int total = 0;
  for (const auto& ind : individuals) total += static_cast<int>(ind.y.size());
  return total;
}

void validate(const Dataset& data) {
  if (data.individuals.empty()) {
    throw ConfigError("dataset: no individuals");
  }
  const auto k = data.individuals.front().x.cols();
  for (const auto& ind : data.individuals) {
    if (ind.y.size() == 0) {
      throw ConfigError("dataset: individual '" + ind.id +
                        "' has no observations");
    }
    if (ind.x.rows() != ind.y.size()) {
      throw ConfigError("dataset: individual '" + ind.id +
                        "' has mismatched y and x row counts");
    }
    if (ind.x.cols() != k) {
      throw ConfigError("dataset: individual '" + ind.id +
                        "' has a different covariate count");
    }
    if (!ind.y.allFinite() || !all_finite(ind.x)) {
      throw ConfigError("dataset: individual '" + ind.id +
                        "' contains non-finite values");
    }
  }
}

void validate(const ModelSpec& model) {
  if (model.n_fixed < 0 || model.n_effects < 1) {
    throw ConfigError("model: need n_fixed >= 0 and n_effects >= 1");
  }
  if (!model.mean) {
    throw ConfigError("model: mean function is not set");
  }
}

double mean_eval(const ModelSpec& model, const Eigen::VectorXd& x,
                 const Eigen::VectorXd& beta, const Eigen::VectorXd& s) {
  const double g = model.mean(x, beta, s);
  if (!std::isfinite(g)) {
    std::ostringstream msg;
    msg << "mean function '" << model.name << "' returned non-finite " << g
        << " at x = [" << x.transpose() << "], beta = [" << beta.transpose()
        << "], s = [" << s.transpose() << "]";
    throw EvalError(msg.str());
  }
  return g;
}

void mean_eval_batch(const ModelSpec& model, const Eigen::MatrixXd& X,
                     const Eigen::VectorXd& beta, const Eigen::VectorXd& s,
                     Eigen::VectorXd& out) {
  out.resize(X.rows());
  if (model.mean_batch) {
    model.mean_batch(X, beta, s, out);
  } else {
    for (Eigen::Index j = 0; j < X.rows(); ++j) {
      out[j] = model.mean(X.row(j), beta, s);
    }
  }
  if (!out.allFinite()) {
    std::ostringstream msg;
    msg << "mean function '" << model.name
        << "' returned a non-finite value; beta = [" << beta.transpose()
        << "], s = [" << s.transpose() << "]";
    throw EvalError(msg.str());
  }
}

Eigen::MatrixXd psd_cholesky(const Eigen::MatrixXd& A) {
  const auto n = A.rows();
  if (A.cols() != n) throw ConfigError("psd_cholesky: matrix must be square");
  const double scale = std::max(1.0, A.diagonal().cwiseAbs().maxCoeff());
  const double tol = 1e-12 * scale;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = A(j, j) - L.row(j).head(j).squaredNorm();
    if (d < -1e-8 * scale) {
      throw EvalError("psd_cholesky: matrix is not positive semidefinite");
    }
    if (d <= tol) {
      // Semidefinite pivot: the whole column is zero up to noise.
      continue;
    }
    L(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      L(i, j) = (A(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
    }
  }
  return L;
}

}  // namespace vcboot
