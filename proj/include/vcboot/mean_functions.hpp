#pragma once

#include <string>
#include <vector>

#include "vcboot/types.hpp"

namespace vcboot {

// Mean linear in both beta and the realized effect s:
//   g(x, beta, s) = sum_a beta[a] * feature(beta_cols[a])
//                 + sum_k s[k]    * feature(s_cols[k])
// where feature(0) = 1 (intercept) and feature(c) = x[c-1] for c >= 1.
// Sets linear_in_effects and a least-squares init_beta.
ModelSpec linear_model(std::vector<int> beta_cols, std::vector<int> s_cols,
                       std::string name = "linear");

// Sigmoidal growth curve over t = x[t_col-1]:
//   g = (beta[0] + s[0]) / (1 + exp(-(t - (beta[1] + s[1])) / (beta[2] + s[2])))
// Three fixed effects (asymptote, midpoint, scale), each paired with a
// random effect.
ModelSpec logistic_model(int t_col = 1, std::string name = "logistic");

}  // namespace vcboot
