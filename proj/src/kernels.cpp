#include "densereg/kernels.hpp"

#include <algorithm>
#include <cmath>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace densereg::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1 << 14;
constexpr std::size_t kColumnBlock = 16;

inline double adam_element(double& theta, double g, double& m, double& v, const AdamCoefficients& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g * g;
  const double m_hat = m / c.bias_correction1;
  const double v_hat = v / c.bias_correction2;
  theta -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  return theta;
}

}  // namespace

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t r,
             std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < r; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void column_sums(std::span<const double> a, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a[i * cols + j];
    out[j] = s;
  }
}

void add_row_vector(std::span<double> a, std::span<const double> v, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) a[i * cols + j] += v[j];
}

void column_mean_var(std::span<const double> a, std::span<double> mean, std::span<double> var, std::size_t rows,
                     std::size_t cols) {
  const double inv_n = 1.0 / static_cast<double>(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a[i * cols + j];
    const double mu = s * inv_n;
    double ss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double d = a[i * cols + j] - mu;
      ss += d * d;
    }
    mean[j] = mu;
    var[j] = ss * inv_n;
  }
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& coeff) {
  for (std::size_t i = 0; i < theta.size(); ++i) adam_element(theta[i], grad[i], m[i], v[i], coeff);
}

}  // namespace serial

namespace omp {

// Row-parallel i-k-j product. Each c[i][j] still accumulates p = 0..k-1 in
// order starting from zero, matching serial::gemm_nn exactly.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t r,
             std::size_t m, std::size_t n) {
  const auto out_rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * r * n >= kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < out_rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < r; ++p) {
      const double api = a[p * m + i];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

// Column-block parallel; inside a block rows are swept in order, so each
// column accumulates exactly as in serial::column_sums.
void column_sums(std::span<const double> a, std::span<double> out, std::size_t rows, std::size_t cols) {
  const auto blocks = static_cast<std::ptrdiff_t>((cols + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold && blocks > 1)
  for (std::ptrdiff_t bb = 0; bb < blocks; ++bb) {
    const std::size_t lo = static_cast<std::size_t>(bb) * kColumnBlock;
    const std::size_t hi = std::min(cols, lo + kColumnBlock);
    for (std::size_t j = lo; j < hi; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = a.data() + i * cols;
      for (std::size_t j = lo; j < hi; ++j) out[j] += row[j];
    }
  }
}

void add_row_vector(std::span<double> a, std::span<const double> v, std::size_t rows, std::size_t cols) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    double* row = a.data() + static_cast<std::size_t>(ii) * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += v[j];
  }
}

void column_mean_var(std::span<const double> a, std::span<double> mean, std::span<double> var, std::size_t rows,
                     std::size_t cols) {
  const double inv_n = 1.0 / static_cast<double>(rows);
  const auto blocks = static_cast<std::ptrdiff_t>((cols + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold && blocks > 1)
  for (std::ptrdiff_t bb = 0; bb < blocks; ++bb) {
    const std::size_t lo = static_cast<std::size_t>(bb) * kColumnBlock;
    const std::size_t hi = std::min(cols, lo + kColumnBlock);
    for (std::size_t j = lo; j < hi; ++j) {
      mean[j] = 0.0;
      var[j] = 0.0;
    }
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = a.data() + i * cols;
      for (std::size_t j = lo; j < hi; ++j) mean[j] += row[j];
    }
    for (std::size_t j = lo; j < hi; ++j) mean[j] *= inv_n;
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = a.data() + i * cols;
      for (std::size_t j = lo; j < hi; ++j) {
        const double d = row[j] - mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = lo; j < hi; ++j) var[j] *= inv_n;
  }
}

void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& coeff) {
  const auto n = static_cast<std::ptrdiff_t>(theta.size());
#pragma omp parallel for schedule(static) if (theta.size() >= kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    adam_element(theta[k], grad[k], m[k], v[k], coeff);
  }
}

}  // namespace omp

}  // namespace densereg::kernels
