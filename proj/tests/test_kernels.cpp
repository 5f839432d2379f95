#include <doctest.h>

#include <array>
#include <cmath>

#include "uop/kernels.hpp"
#include "uop/rng.hpp"

using namespace uop;

namespace {
bool close(double a, double b, double tol = 1e-12) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}
}  // namespace

TEST_CASE("rng streams are reproducible and fork independently") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());
  Rng c(7);
  Rng f = c.fork("x");
  Rng c2(7);
  Rng f2 = c2.fork("x");
  CHECK(f.u64() == f2.u64());
  // forking does not disturb the parent
  CHECK(c.u64() == c2.u64());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("sample_without_replacement yields distinct indices") {
  Rng rng(3);
  auto s = rng.sample_without_replacement(10, 10);
  std::vector<char> seen(10, 0);
  for (auto i : s) {
    CHECK(!seen[i]);
    seen[i] = 1;
  }
}

#if defined(__x86_64__) || defined(_M_X64)
TEST_CASE("scalar and avx2 kernels agree") {
  if (!kernels::avx2_available()) return;
  const auto& s = kernels::scalar_table;
  const auto& v = kernels::avx2_table;
  Rng rng(11);
  // sizes straddle the 4-lane boundary
  for (size_t n : {1u, 3u, 4u, 5u, 17u, 64u, 127u}) {
    std::vector<double> x(n), y(n), o1(n), o2(n);
    for (auto& e : x) e = rng.uniform(-2, 2);
    for (auto& e : y) e = rng.uniform(-2, 2);
    CHECK(close(s.dot(n, x.data(), y.data()), v.dot(n, x.data(), y.data())));
    CHECK(close(s.sum(n, x.data()), v.sum(n, x.data())));
    s.add(n, x.data(), y.data(), o1.data());
    v.add(n, x.data(), y.data(), o2.data());
    for (size_t i = 0; i < n; ++i) CHECK(o1[i] == o2[i]);
    s.mul(n, x.data(), y.data(), o1.data());
    v.mul(n, x.data(), y.data(), o2.data());
    for (size_t i = 0; i < n; ++i) CHECK(o1[i] == o2[i]);
    s.scale(n, 1.7, x.data(), o1.data());
    v.scale(n, 1.7, x.data(), o2.data());
    for (size_t i = 0; i < n; ++i) CHECK(o1[i] == o2[i]);
    auto y1 = y, y2 = y;
    s.axpy(n, 0.3, x.data(), y1.data());
    v.axpy(n, 0.3, x.data(), y2.data());
    for (size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i]));
  }
  for (auto [m, n, k] : std::vector<std::array<size_t, 3>>{
           {1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {8, 8, 8}, {13, 9, 21}}) {
    std::vector<double> A(m * k), B(k * n), Bt(n * k), At(k * m), C1(m * n), C2(m * n);
    for (auto& e : A) e = rng.uniform(-1, 1);
    for (auto& e : B) e = rng.uniform(-1, 1);
    for (auto& e : Bt) e = rng.uniform(-1, 1);
    for (auto& e : At) e = rng.uniform(-1, 1);
    s.gemm_nn(m, n, k, A.data(), B.data(), C1.data(), false);
    v.gemm_nn(m, n, k, A.data(), B.data(), C2.data(), false);
    for (size_t i = 0; i < m * n; ++i) CHECK(close(C1[i], C2[i]));
    s.gemm_nt(m, n, k, A.data(), Bt.data(), C1.data(), false);
    v.gemm_nt(m, n, k, A.data(), Bt.data(), C2.data(), false);
    for (size_t i = 0; i < m * n; ++i) CHECK(close(C1[i], C2[i]));
    s.gemm_tn(m, n, k, At.data(), B.data(), C1.data(), false);
    v.gemm_tn(m, n, k, At.data(), B.data(), C2.data(), false);
    for (size_t i = 0; i < m * n; ++i) CHECK(close(C1[i], C2[i]));
    s.gemm_nn(m, n, k, A.data(), B.data(), C1.data(), true);
    v.gemm_nn(m, n, k, A.data(), B.data(), C2.data(), true);
    for (size_t i = 0; i < m * n; ++i) CHECK(close(C1[i], C2[i]));
  }
}
#endif

TEST_CASE("backend selection is explicit and reversible") {
  const std::string before = kernels::active_name();
  kernels::set_backend(kernels::Backend::Scalar);
  CHECK(kernels::active_name() == "scalar");
  kernels::set_backend(kernels::Backend::Auto);
  CHECK(kernels::active_name() == before);
  CHECK_THROWS(kernels::backend_from_string("neon"));
}
