#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fcvae/matrix.hpp"
#include "fcvae/rng.hpp"

namespace fcvae {

inline constexpr double kLogTwoPi = 1.8378770664093453;

// Floor applied to every Bernoulli probability before a log is taken; keeps
// log-likelihoods finite.
inline constexpr double kProbFloor = 1e-6;

inline double floor_prob(double p) {
  if (p < kProbFloor) return kProbFloor;
  if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
  return p;
}

inline double gaussian_log_pdf(double x, double mean, double log_std) {
  double z = (x - mean) * std::exp(-log_std);
  return -0.5 * z * z - log_std - 0.5 * kLogTwoPi;
}

// Diagonal Gaussian, summed over dimensions.
inline double gaussian_log_pdf(std::span<const double> x, std::span<const double> mean,
                               std::span<const double> log_std) {
  require(x.size() == mean.size() && x.size() == log_std.size(),
          "gaussian_log_pdf: dimension mismatch");
  double lp = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) lp += gaussian_log_pdf(x[j], mean[j], log_std[j]);
  return lp;
}

inline double bernoulli_log_pmf(int value, double p) {
  require(value == 0 || value == 1, "bernoulli_log_pmf: value must be a bit");
  p = floor_prob(p);
  return value == 1 ? std::log(p) : std::log1p(-p);
}

// KL(N(mean, diag(sigma^2)) || N(0, I)), closed form.
inline double gaussian_kl_to_standard(std::span<const double> mean,
                                      std::span<const double> log_std) {
  require(mean.size() == log_std.size(), "gaussian_kl_to_standard: dimension mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    double s2 = std::exp(2.0 * log_std[j]);
    kl += 0.5 * (mean[j] * mean[j] + s2 - 1.0) - log_std[j];
  }
  return kl;
}

// z = mean + exp(log_std) .* u, u standard normal from the stream.
inline std::vector<double> gaussian_sample_reparam(std::span<const double> mean,
                                                   std::span<const double> log_std,
                                                   NoiseStream& noise) {
  require(mean.size() == log_std.size(), "gaussian_sample_reparam: dimension mismatch");
  std::vector<double> z(mean.size());
  for (std::size_t j = 0; j < z.size(); ++j)
    z[j] = mean[j] + std::exp(log_std[j]) * noise.normal();
  return z;
}

}  // namespace fcvae
