#include "fednorm/statkernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fednorm {

namespace {

// Neumaier variant of Kahan summation.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }

  double total() const { return sum + comp; }
};

void check_vector_size(const std::vector<double>& v, std::size_t d,
                       const char* what, const char* name) {
  if (v.size() != d) {
    throw std::invalid_argument(std::string(what) + ": " + name + " has size " +
                                std::to_string(v.size()) + ", expected " +
                                std::to_string(d));
  }
}

}  // namespace

AffineParams AffineParams::identity(std::size_t d) {
  return AffineParams{std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)};
}

RunningStats make_running_stats(std::size_t d, double momentum, double eps) {
  if (!(momentum > 0.0 && momentum <= 1.0)) {
    throw std::invalid_argument("make_running_stats: momentum must be in (0, 1]");
  }
  if (!(eps >= 0.0)) {
    throw std::invalid_argument("make_running_stats: eps must be non-negative");
  }
  RunningStats s;
  s.mean.assign(d, 0.0);
  s.var.assign(d, 1.0);
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

Moments batch_moments(const FeatureBatch& batch) {
  if (batch.rows == 0 || batch.cols == 0) {
    throw std::invalid_argument("batch_moments: batch must be non-empty");
  }
  if (batch.data.size() != batch.rows * batch.cols) {
    throw std::invalid_argument("batch_moments: data size does not match shape");
  }
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t c = 0; c < batch.cols; ++c) {
      if (!std::isfinite(batch.at(r, c))) {
        throw std::invalid_argument("batch_moments: non-finite value at row " +
                                    std::to_string(r) + ", column " +
                                    std::to_string(c));
      }
    }
  }
  Moments m;
  m.count = batch.rows;
  m.mean.resize(batch.cols);
  m.var_biased.resize(batch.cols);
  const double inv_k = 1.0 / static_cast<double>(batch.rows);
  for (std::size_t c = 0; c < batch.cols; ++c) {
    CompensatedSum s;
    for (std::size_t r = 0; r < batch.rows; ++r) s.add(batch.at(r, c));
    m.mean[c] = s.total() * inv_k;
  }
  for (std::size_t c = 0; c < batch.cols; ++c) {
    CompensatedSum s;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const double d = batch.at(r, c) - m.mean[c];
      s.add(d * d);
    }
    m.var_biased[c] = s.total() * inv_k;
  }
  return m;
}

FeatureBatch normalize(const FeatureBatch& batch,
                       const std::vector<double>& mean,
                       const std::vector<double>& var, double eps,
                       const AffineParams& affine) {
  const std::size_t d = batch.cols;
  check_vector_size(mean, d, "normalize", "mean");
  check_vector_size(var, d, "normalize", "var");
  check_vector_size(affine.scale, d, "normalize", "affine.scale");
  check_vector_size(affine.shift, d, "normalize", "affine.shift");
  if (!(eps >= 0.0)) {
    throw std::invalid_argument("normalize: eps must be non-negative");
  }
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) {
    if (var[c] < 0.0) {
      throw std::invalid_argument("normalize: negative variance at column " +
                                  std::to_string(c));
    }
    const double denom = var[c] + eps;
    if (!(denom > 0.0)) {
      throw std::invalid_argument(
          "normalize: var + eps must be positive at column " +
          std::to_string(c));
    }
    inv_std[c] = 1.0 / std::sqrt(denom);
  }
  FeatureBatch out(batch.rows, d);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out.at(r, c) =
          (batch.at(r, c) - mean[c]) * inv_std[c] * affine.scale[c] +
          affine.shift[c];
    }
  }
  return out;
}

std::vector<double> column_mean(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) {
    throw std::invalid_argument("column_mean: no rows");
  }
  const std::size_t d = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != d) {
      throw std::invalid_argument("column_mean: ragged rows");
    }
  }
  std::vector<double> out(d);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (std::size_t c = 0; c < d; ++c) {
    CompensatedSum s;
    for (const auto& r : rows) s.add(r[c]);
    out[c] = s.total() * inv_n;
  }
  return out;
}

RunningStats update_running(const RunningStats& current, const Moments& m,
                            std::size_t bessel_count) {
  const std::size_t d = current.mean.size();
  check_vector_size(current.var, d, "update_running", "current.var");
  check_vector_size(m.mean, d, "update_running", "moments.mean");
  check_vector_size(m.var_biased, d, "update_running", "moments.var_biased");
  if (bessel_count < 2) {
    throw std::invalid_argument(
        "update_running: bessel_count must be at least 2");
  }
  if (!(current.momentum > 0.0 && current.momentum <= 1.0)) {
    throw std::invalid_argument("update_running: momentum must be in (0, 1]");
  }
  const double beta = current.momentum;
  const double bessel = static_cast<double>(bessel_count) /
                        static_cast<double>(bessel_count - 1);
  RunningStats out = current;
  for (std::size_t c = 0; c < d; ++c) {
    out.mean[c] = (1.0 - beta) * current.mean[c] + beta * m.mean[c];
    out.var[c] =
        (1.0 - beta) * current.var[c] + beta * bessel * m.var_biased[c];
  }
  return out;
}

}  // namespace fednorm
