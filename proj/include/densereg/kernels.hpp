#pragma once

// Data-parallel inner loops. Every kernel exists twice: `serial::` is the
// plain reference loop kept for testing, `omp::` is the OpenMP version used by
// the library. Both accumulate each output element in the same order, so the
// two agree bit for bit (the build disables FP contraction to keep it so).

#include <cstddef>
#include <span>

namespace densereg::kernels {

/// Hyper-parameters of one bias-corrected Adam update.
struct AdamCoefficients {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
// c[m x n] = a[r x m]^T * b[r x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t r,
             std::size_t m, std::size_t n);
void column_sums(std::span<const double> a, std::span<double> out, std::size_t rows, std::size_t cols);
void add_row_vector(std::span<double> a, std::span<const double> v, std::size_t rows, std::size_t cols);
// Two-pass per-column mean and biased variance.
void column_mean_var(std::span<const double> a, std::span<double> mean, std::span<double> var, std::size_t rows,
                     std::size_t cols);
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& coeff);

}  // namespace serial

namespace omp {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t r,
             std::size_t m, std::size_t n);
void column_sums(std::span<const double> a, std::span<double> out, std::size_t rows, std::size_t cols);
void add_row_vector(std::span<double> a, std::span<const double> v, std::size_t rows, std::size_t cols);
void column_mean_var(std::span<const double> a, std::span<double> mean, std::span<double> var, std::size_t rows,
                     std::size_t cols);
void adam_update(std::span<double> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& coeff);

}  // namespace omp

/// Number of OpenMP threads the omp kernels will use (1 without OpenMP).
int max_threads();

}  // namespace densereg::kernels
