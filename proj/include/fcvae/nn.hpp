#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "fcvae/matrix.hpp"
#include "fcvae/rng.hpp"

namespace fcvae {

inline double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }

// Overflow-safe logistic.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Plain feed-forward net: affine + ELU per hidden layer, final layer affine
// with no activation (heads apply their own link).
struct MlpParams {
  std::vector<int> layer_sizes;  // e.g. {25, 20, 10}
  std::vector<Matrix> weights;   // weights[l]: in x out
  std::vector<Matrix> biases;    // biases[l]: 1 x out
};

// Zero biases, weights uniform in +-sqrt(6/(fan_in+fan_out)).
inline MlpParams make_mlp(std::vector<int> sizes, NoiseStream& init) {
  require(sizes.size() >= 2, "make_mlp: need at least input and output sizes");
  MlpParams p;
  p.layer_sizes = std::move(sizes);
  for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    int in = p.layer_sizes[l], out = p.layer_sizes[l + 1];
    require(in > 0 && out > 0, "make_mlp: layer sizes must be positive");
    double bound = std::sqrt(6.0 / (in + out));
    Matrix w(in, out);
    for (Index i = 0; i < w.rows(); ++i)
      for (Index j = 0; j < w.cols(); ++j) w(i, j) = (2.0 * init.uniform() - 1.0) * bound;
    p.weights.push_back(std::move(w));
    p.biases.push_back(Matrix::Zero(1, out));
  }
  return p;
}

inline std::size_t param_count(const MlpParams& p) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l)
    n += static_cast<std::size_t>(p.weights[l].size() + p.biases[l].size());
  return n;
}

inline Matrix mlp_forward(const MlpParams& p, const Matrix& input) {
  require(!p.weights.empty(), "mlp_forward: empty net");
  require(input.cols() == p.weights.front().rows(),
          "mlp_forward: input cols do not match first layer size");
  Matrix h = input;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Matrix z = h * p.weights[l];
    z.rowwise() += p.biases[l].row(0);
    if (l + 1 < p.weights.size()) z = z.unaryExpr([](double v) { return elu(v); });
    h = std::move(z);
  }
  return h;
}

// Flat layout: per layer, weight entries (row-major) then bias entries.
inline void pack_into(const MlpParams& p, double* dst) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Matrix& w = p.weights[l];
    dst = std::copy(w.data(), w.data() + w.size(), dst);
    const Matrix& b = p.biases[l];
    dst = std::copy(b.data(), b.data() + b.size(), dst);
  }
}

inline void unpack_from(MlpParams& p, const double* src) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Matrix& w = p.weights[l];
    std::copy(src, src + w.size(), w.data());
    src += w.size();
    Matrix& b = p.biases[l];
    std::copy(src, src + b.size(), b.data());
    src += b.size();
  }
}

}  // namespace fcvae
