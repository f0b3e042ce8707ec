#pragma once

#include <cstddef>
#include <vector>

namespace fednorm {

// Row-major matrix of K samples by d features.
struct FeatureBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureBatch() = default;
  FeatureBatch(std::size_t r, std::size_t c)
      : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct Moments {
  std::vector<double> mean;
  std::vector<double> var_biased;  // normalized by K, not K - 1
  std::size_t count = 0;
};

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;  // weight of the fresh batch contribution
  double eps = 1e-5;
};

struct AffineParams {
  std::vector<double> scale;
  std::vector<double> shift;

  static AffineParams identity(std::size_t d);
};

// mean 0, var 1 in every coordinate: the convention for round zero.
RunningStats make_running_stats(std::size_t d, double momentum = 0.1,
                                double eps = 1e-5);

// Column means and biased variances. Two-pass, compensated accumulation.
Moments batch_moments(const FeatureBatch& batch);

// (x - mean) / sqrt(var + eps) * scale + shift, column-wise.
FeatureBatch normalize(const FeatureBatch& batch,
                       const std::vector<double>& mean,
                       const std::vector<double>& var, double eps,
                       const AffineParams& affine);

// EMA update of running statistics from one batch's moments. The variance
// contribution is debiased by bessel_count / (bessel_count - 1), where
// bessel_count is the total sample count behind the moments.
RunningStats update_running(const RunningStats& current, const Moments& m,
                            std::size_t bessel_count);

// Coordinate-wise mean of equally sized vectors, compensated accumulation.
std::vector<double> column_mean(const std::vector<std::vector<double>>& rows);

}  // namespace fednorm
