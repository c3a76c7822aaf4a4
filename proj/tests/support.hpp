#ifndef MTDL_TESTS_SUPPORT_HPP_
#define MTDL_TESTS_SUPPORT_HPP_

#include <cmath>
#include <random>
#include <vector>

#include "mtdl/data.hpp"
#include "mtdl/tensor.hpp"

namespace mtdl::test {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Tensor random_vector(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t = Tensor::zeros({n});
  for (double& v : t.data) v = u(gen);
  return t;
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen,
                            double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = u(gen);
  return t;
}

// Central finite difference of a scalar functional with respect to one
// coordinate of `t`. The functional must re-run the full forward pass.
template <typename F>
double central_diff(F&& loss, Tensor& t, std::size_t i, double eps = 1e-5) {
  double keep = t.data[i];
  t.data[i] = keep + eps;
  double up = loss();
  t.data[i] = keep - eps;
  double down = loss();
  t.data[i] = keep;
  return (up - down) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
  double ma = std::fabs(a);
  double mb = std::fabs(b);
  if (ma < 1e-8 && mb < 1e-8) return 0.0;
  return std::fabs(a - b) / std::max(ma, mb);
}

// Analytically optimal classifier on the synthetic task: nearest class
// signature to the mean of the ground-truth masked frames.
inline std::size_t bayes_oracle_predict(const SyntheticSpec& spec, const FeatureSequence& seq) {
  std::vector<double> mean(seq.dim, 0.0);
  std::size_t count = 0;
  for (std::size_t t = 0; t < seq.length; ++t) {
    if (!seq.mask.empty() && seq.mask[t]) {
      const double* f = seq.frame(t);
      for (std::size_t j = 0; j < seq.dim; ++j) mean[j] += f[j];
      ++count;
    }
  }
  if (count > 0) {
    for (double& v : mean) v /= static_cast<double>(count);
  }
  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<double> sig = class_signature(spec, c);
    double d = 0.0;
    for (std::size_t j = 0; j < seq.dim; ++j) {
      double diff = mean[j] - sig[j];
      d += diff * diff;
    }
    if (c == 0 || d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline double bayes_oracle_accuracy(const SyntheticSpec& spec,
                                    const std::vector<FeatureSequence>& set) {
  std::size_t hit = 0;
  for (const auto& seq : set) {
    if (bayes_oracle_predict(spec, seq) == seq.label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(set.size());
}

}  // namespace mtdl::test

#endif  // MTDL_TESTS_SUPPORT_HPP_
