// AVX2+FMA kernels. Compiled with -mavx2 -mfma on x86_64 only; selected at
// runtime after a cpuid check, so the rest of the binary stays portable.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "uop/kernels.hpp"

namespace uop::kernels {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(size_t n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void add_avx2(size_t n, const double* x, const double* y, double* out) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(size_t n, const double* x, const double* y, double* out) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx2(size_t n, const double* x, const double* y, double* out) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(size_t n, double a, const double* x, double* out) {
  const __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

double sum_avx2(size_t n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

void gemm_nn_avx2(size_t m, size_t n, size_t k, const double* A, const double* B,
                  double* C, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < m * n; ++i) C[i] = 0.0;
  for (size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const __m256d va = _mm256_set1_pd(A[i * k + kk]);
      const double* brow = B + kk * n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d vc = _mm256_loadu_pd(crow + j);
        vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
        _mm256_storeu_pd(crow + j, vc);
      }
      const double a = A[i * k + kk];
      for (; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void gemm_nt_avx2(size_t m, size_t n, size_t k, const double* A, const double* B,
                  double* C, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = accumulate ? C[i * n + j] : 0.0;
      acc += dot_avx2(k, A + i * k, B + j * k);
      C[i * n + j] = acc;
    }
  }
}

void gemm_tn_avx2(size_t m, size_t n, size_t k, const double* A, const double* B,
                  double* C, bool accumulate) {
  if (!accumulate)
    for (size_t i = 0; i < m * n; ++i) C[i] = 0.0;
  for (size_t kk = 0; kk < k; ++kk) {
    const double* arow = A + kk * m;
    const double* brow = B + kk * n;
    for (size_t i = 0; i < m; ++i) {
      const __m256d va = _mm256_set1_pd(arow[i]);
      double* crow = C + i * n;
      size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d vc = _mm256_loadu_pd(crow + j);
        vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
        _mm256_storeu_pd(crow + j, vc);
      }
      for (; j < n; ++j) crow[j] += arow[i] * brow[j];
    }
  }
}

}  // namespace

const KernelTable avx2_table = {
    "avx2",     dot_avx2,   axpy_avx2,    add_avx2,     sub_avx2,
    mul_avx2,   scale_avx2, sum_avx2,     gemm_nn_avx2, gemm_nt_avx2,
    gemm_tn_avx2,
};

}  // namespace uop::kernels

#endif  // x86_64
