#pragma once

#include "moka/common.hpp"

#include <functional>
#include <vector>

namespace moka {

// Central-difference gradient oracle: (f(p+h) - f(p-h)) / 2h per scalar
// entry. Only evaluates f forward, so it is independent of any backward
// implementation it is used to check. Meant to run in double precision.
inline std::vector<MatXd> fd_gradient(
    const std::function<double(const std::vector<MatXd>&)>& f,
    std::vector<MatXd> params, double step) {
  std::vector<MatXd> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(MatXd::Zero(p.rows(), p.cols()));

  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Index i = 0; i < params[k].rows(); ++i) {
      for (Index j = 0; j < params[k].cols(); ++j) {
        const double saved = params[k](i, j);
        params[k](i, j) = saved + step;
        const double up = f(params);
        params[k](i, j) = saved - step;
        const double down = f(params);
        params[k](i, j) = saved;
        grads[k](i, j) = (up - down) / (2.0 * step);
      }
    }
  }
  return grads;
}

// Relative error with an absolute floor, so near-zero analytic/fd pairs do
// not blow up the ratio.
inline double rel_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

inline double max_rel_error(const MatXd& a, const MatXd& b) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      worst = std::max(worst, rel_error(a(i, j), b(i, j)));
  return worst;
}

}  // namespace moka
