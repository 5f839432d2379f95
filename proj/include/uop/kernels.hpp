#pragma once

#include <cstddef>
#include <string>

namespace uop::kernels {

// Hot inner loops, double precision, row-major contiguous matrices.
// Two implementations: a scalar reference and an AVX2+FMA variant. The active
// table is chosen at runtime from CPU capabilities; tests pin either backend
// explicitly and check the variants against each other.
struct KernelTable {
  const char* name;

  // out = sum_i x[i] * y[i]
  double (*dot)(size_t n, const double* x, const double* y);
  // y[i] += a * x[i]
  void (*axpy)(size_t n, double a, const double* x, double* y);
  // out[i] = x[i] + y[i] / x[i] - y[i] / x[i] * y[i]
  void (*add)(size_t n, const double* x, const double* y, double* out);
  void (*sub)(size_t n, const double* x, const double* y, double* out);
  void (*mul)(size_t n, const double* x, const double* y, double* out);
  // out[i] = a * x[i]
  void (*scale)(size_t n, double a, const double* x, double* out);
  double (*sum)(size_t n, const double* x);

  // C[m x n] = A[m x k] * B[k x n], C zeroed first unless accumulate.
  void (*gemm_nn)(size_t m, size_t n, size_t k, const double* A, const double* B,
                  double* C, bool accumulate);
  // C[m x n] = A[m x k] * B[n x k]^T
  void (*gemm_nt)(size_t m, size_t n, size_t k, const double* A, const double* B,
                  double* C, bool accumulate);
  // C[m x n] = A[k x m]^T * B[k x n]
  void (*gemm_tn)(size_t m, size_t n, size_t k, const double* A, const double* B,
                  double* C, bool accumulate);
};

enum class Backend { Auto, Scalar, Avx2 };

// Active table. Resolved once on first use unless overridden.
const KernelTable& active();

// Force a backend (throws if unavailable on this CPU). Mainly for tests and
// the `--kernels` CLI flag.
void set_backend(Backend b);
Backend backend_from_string(const std::string& s);
std::string active_name();
bool avx2_available();

extern const KernelTable scalar_table;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable avx2_table;
#endif

}  // namespace uop::kernels
