#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace fcvae {

struct LossEval {
  double value = 0.0;
  std::vector<double> grad;
};

using LossWithGrad = std::function<LossEval(std::span<const double>)>;

// Compares the analytic gradient against central finite differences and
// returns the max relative error over all coordinates. The loss must be
// deterministic under its frozen noise; evaluating twice at the same point
// and getting different values is rejected.
inline double grad_check(const LossWithGrad& f, std::vector<double> params,
                         double fd_step = 1e-5) {
  LossEval base = f(params);
  LossEval again = f(params);
  if (base.value != again.value)
    throw std::runtime_error("grad_check: loss is not deterministic under frozen noise");
  if (base.grad.size() != params.size())
    throw std::invalid_argument("grad_check: gradient size does not match parameter count");

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + fd_step;
    double up = f(params).value;
    params[i] = saved - fd_step;
    double down = f(params).value;
    params[i] = saved;
    double fd = (up - down) / (2.0 * fd_step);
    double denom = std::max({1e-8, std::abs(fd), std::abs(base.grad[i])});
    worst = std::max(worst, std::abs(fd - base.grad[i]) / denom);
  }
  return worst;
}

}  // namespace fcvae
