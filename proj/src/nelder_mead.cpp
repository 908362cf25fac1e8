#include "vcboot/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vcboot/types.hpp"

namespace vcboot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd clamp(Eigen::VectorXd x, const Eigen::VectorXd& lower,
                      const Eigen::VectorXd& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

}  // namespace

NelderMeadResult nelder_mead_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
    const Eigen::VectorXd& upper, const NelderMeadOptions& opts) {
  const int n = static_cast<int>(x0.size());
  if (lower.size() != n || upper.size() != n) {
    throw ConfigError("nelder_mead: bound sizes do not match x0");
  }
  if ((lower.array() > upper.array()).any()) {
    throw ConfigError("nelder_mead: lower bound exceeds upper bound");
  }

  NelderMeadResult result;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++result.n_evals;
    const double v = f(x);
    return std::isnan(v) ? kInf : v;
  };

  if (n == 0) {
    result.x = x0;
    result.value = eval(x0);
    result.converged = true;
    return result;
  }

  // Initial simplex: x0 plus one displaced vertex per coordinate, flipped
  // inward when the displacement would leave the box.
  std::vector<Eigen::VectorXd> vertex;
  vertex.reserve(n + 1);
  vertex.push_back(clamp(x0, lower, upper));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v = vertex[0];
    double step = opts.init_step * std::max(1.0, std::abs(v[i]));
    if (v[i] + step > upper[i]) step = -step;
    v[i] += step;
    vertex.push_back(clamp(v, lower, upper));
  }
  std::vector<double> value(n + 1);
  for (int i = 0; i <= n; ++i) value[i] = eval(vertex[i]);

  std::vector<int> order(n + 1);
  std::iota(order.begin(), order.end(), 0);
  auto sort_vertices = [&] {
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return value[a] < value[b]; });
  };

  while (result.n_evals < opts.max_evals) {
    sort_vertices();
    const int best = order[0];
    const int worst = order[n];
    const int second_worst = order[n - 1];

    double x_spread = 0.0;
    for (int i = 1; i <= n; ++i) {
      x_spread = std::max(
          x_spread,
          (vertex[order[i]] - vertex[best]).lpNorm<Eigen::Infinity>());
    }
    const double f_spread = value[worst] - value[best];
    if (std::isfinite(value[best]) &&
        (x_spread < opts.x_tol || f_spread < opts.f_tol)) {
      result.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i) {
      if (i != worst) centroid += vertex[i];
    }
    centroid /= n;

    const Eigen::VectorXd reflected =
        clamp(centroid + (centroid - vertex[worst]), lower, upper);
    const double f_reflected = eval(reflected);

    if (f_reflected < value[best]) {
      const Eigen::VectorXd expanded =
          clamp(centroid + 2.0 * (centroid - vertex[worst]), lower, upper);
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        vertex[worst] = expanded;
        value[worst] = f_expanded;
      } else {
        vertex[worst] = reflected;
        value[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < value[second_worst]) {
      vertex[worst] = reflected;
      value[worst] = f_reflected;
      continue;
    }

    bool shrink = false;
    if (f_reflected < value[worst]) {
      const Eigen::VectorXd contracted =
          clamp(centroid + 0.5 * (centroid - vertex[worst]), lower, upper);
      const double f_contracted = eval(contracted);
      if (f_contracted <= f_reflected) {
        vertex[worst] = contracted;
        value[worst] = f_contracted;
      } else {
        shrink = true;
      }
    } else {
      const Eigen::VectorXd contracted =
          clamp(centroid - 0.5 * (centroid - vertex[worst]), lower, upper);
      const double f_contracted = eval(contracted);
      if (f_contracted < value[worst]) {
        vertex[worst] = contracted;
        value[worst] = f_contracted;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (int i = 0; i <= n; ++i) {
        if (i == best) continue;
        vertex[i] = clamp(vertex[best] + 0.5 * (vertex[i] - vertex[best]),
                          lower, upper);
        value[i] = eval(vertex[i]);
      }
    }
  }

  sort_vertices();
  result.x = vertex[order[0]];
  result.value = value[order[0]];
  return result;
}

}  // namespace vcboot
