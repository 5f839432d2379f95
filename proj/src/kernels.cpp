#include "uop/kernels.hpp"

#include "uop/common.hpp"

namespace uop::kernels {

namespace {
const KernelTable* g_active = nullptr;

const KernelTable* resolve_auto() {
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2_available()) return &avx2_table;
#endif
  return &scalar_table;
}
}  // namespace

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() {
  if (!g_active) g_active = resolve_auto();
  return *g_active;
}

void set_backend(Backend b) {
  switch (b) {
    case Backend::Auto:
      g_active = resolve_auto();
      break;
    case Backend::Scalar:
      g_active = &scalar_table;
      break;
    case Backend::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      UOP_CHECK(avx2_available(), "avx2 backend requested but CPU lacks avx2/fma");
      g_active = &avx2_table;
#else
      throw Error("avx2 backend not built on this architecture");
#endif
      break;
  }
}

Backend backend_from_string(const std::string& s) {
  if (s == "auto") return Backend::Auto;
  if (s == "scalar") return Backend::Scalar;
  if (s == "avx2") return Backend::Avx2;
  throw Error("unknown kernel backend: " + s);
}

std::string active_name() { return active().name; }

}  // namespace uop::kernels
