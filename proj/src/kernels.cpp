#include "ulab/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace ulab::kernels {

bool avx2_supported() {
#if defined(ULAB_BUILD_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* resolve_default() {
  const char* env = std::getenv("ULAB_KERNELS");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_table();
#if defined(ULAB_BUILD_AVX2)
    if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return &avx2_table();
#endif
  }
#if defined(ULAB_BUILD_AVX2)
  if (avx2_supported()) return &avx2_table();
#endif
  return &scalar_table();
}

const KernelTable*& active_slot() {
  static const KernelTable* slot = resolve_default();
  return slot;
}

}  // namespace

bool set_backend(Backend b) {
  switch (b) {
    case Backend::scalar:
      active_slot() = &scalar_table();
      return true;
    case Backend::avx2:
#if defined(ULAB_BUILD_AVX2)
      if (avx2_supported()) {
        active_slot() = &avx2_table();
        return true;
      }
#endif
      return false;
  }
  return false;
}

Backend active_backend() {
  return active_slot() == &scalar_table() ? Backend::scalar : Backend::avx2;
}

const KernelTable& active() { return *active_slot(); }

std::string backend_name() { return active().name; }

}  // namespace ulab::kernels
