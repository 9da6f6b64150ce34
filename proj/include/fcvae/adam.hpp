#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fcvae/matrix.hpp"

namespace fcvae {

struct AdamState {
  std::int64_t step = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment

  explicit AdamState(std::size_t n, double lr_ = 0.001)
      : lr(lr_), m(n, 0.0), v(n, 0.0) {}
};

// Standard bias-corrected update, in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st) {
  require(params.size() == grads.size() && params.size() == st.m.size(),
          "adam_step: shape mismatch");
  st.step += 1;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
    double mhat = st.m[i] / bc1;
    double vhat = st.v[i] / bc2;
    params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

}  // namespace fcvae
