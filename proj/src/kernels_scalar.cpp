// Reference kernels. Deliberately plain loops: this is the semantics the SIMD
// variants are tested against.

#include "uop/kernels.hpp"

namespace uop::kernels {

namespace {

double dot_scalar(size_t n, const double* x, const double* y) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(size_t n, double a, const double* x, double* y) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scalar(size_t n, const double* x, const double* y, double* out) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_scalar(size_t n, const double* x, const double* y, double* out) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_scalar(size_t n, const double* x, const double* y, double* out) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_scalar(size_t n, double a, const double* x, double* out) {
  for (size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

double sum_scalar(size_t n, const double* x) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void gemm_nn_scalar(size_t m, size_t n, size_t k, const double* A, const double* B,
                    double* C, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < m * n; ++i) C[i] = 0.0;
  for (size_t i = 0; i < m; ++i) {
    for (size_t kk = 0; kk < k; ++kk) {
      const double a = A[i * k + kk];
      const double* brow = B + kk * n;
      double* crow = C + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void gemm_nt_scalar(size_t m, size_t n, size_t k, const double* A, const double* B,
                    double* C, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = accumulate ? C[i * n + j] : 0.0;
      acc += dot_scalar(k, A + i * k, B + j * k);
      C[i * n + j] = acc;
    }
  }
}

void gemm_tn_scalar(size_t m, size_t n, size_t k, const double* A, const double* B,
                    double* C, bool accumulate) {
  // A is k x m, B is k x n.
  if (!accumulate)
    for (size_t i = 0; i < m * n; ++i) C[i] = 0.0;
  for (size_t kk = 0; kk < k; ++kk) {
    const double* arow = A + kk * m;
    const double* brow = B + kk * n;
    for (size_t i = 0; i < m; ++i) {
      const double a = arow[i];
      double* crow = C + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace

const KernelTable scalar_table = {
    "scalar",     dot_scalar,   axpy_scalar,    add_scalar,     sub_scalar,
    mul_scalar,   scale_scalar, sum_scalar,     gemm_nn_scalar, gemm_nt_scalar,
    gemm_tn_scalar,
};

}  // namespace uop::kernels
