#pragma once

#include <cstddef>
#include <string>

// Data-parallel compute kernels. Every operation has a scalar reference
// implementation; hot ones additionally have AVX2 variants. The active
// backend is chosen at runtime (cpuid, overridable via ULAB_KERNELS or
// set_backend), and variants are equivalence-tested against the reference.
namespace ulab::kernels {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C, where op(A) is
// m x k and op(B) is k x n. Leading dimensions refer to the stored layout
// (before the transpose).
using SgemmFn = void (*)(bool ta, bool tb, int m, int n, int k, float alpha,
                         const float* a, int lda, const float* b, int ldb,
                         float beta, float* c, int ldc);
using DgemmFn = void (*)(bool ta, bool tb, int m, int n, int k, double alpha,
                         const double* a, int lda, const double* b, int ldb,
                         double beta, double* c, int ldc);

struct KernelTable {
  const char* name;

  SgemmFn sgemm;
  DgemmFn dgemm;

  // GELU (tanh approximation). bwd assigns dx = dy * gelu'(x).
  void (*gelu_fwd_f32)(const float* x, float* y, size_t n);
  void (*gelu_bwd_f32)(const float* x, const float* dy, float* dx, size_t n);
  void (*gelu_fwd_f64)(const double* x, double* y, size_t n);
  void (*gelu_bwd_f64)(const double* x, const double* dy, double* dx, size_t n);

  // LayerNorm over rows of x [rows, d]. fwd caches per-row mean and
  // reciprocal stddev. bwd assigns dx and accumulates into dgamma/dbeta.
  void (*layernorm_fwd_f32)(const float* x, const float* gamma, const float* beta,
                            float* y, float* mean, float* rstd, int rows, int d);
  void (*layernorm_bwd_f32)(const float* x, const float* gamma, const float* mean,
                            const float* rstd, const float* dy, float* dx,
                            float* dgamma, float* dbeta, int rows, int d);
  void (*layernorm_fwd_f64)(const double* x, const double* gamma, const double* beta,
                            double* y, double* mean, double* rstd, int rows, int d);
  void (*layernorm_bwd_f64)(const double* x, const double* gamma, const double* mean,
                            const double* rstd, const double* dy, double* dx,
                            double* dgamma, double* dbeta, int rows, int d);

  // Row-wise softmax with max subtraction.
  void (*softmax_rows_f32)(const float* x, float* y, int rows, int n);
  void (*softmax_rows_f64)(const double* x, double* y, int rows, int n);

  // y += x
  void (*add_f32)(float* y, const float* x, size_t n);
  void (*add_f64)(double* y, const double* x, size_t n);

  float (*dot_f32)(const float* a, const float* b, size_t n);
  double (*dot_f64)(const double* a, const double* b, size_t n);

  // Adam update with bias corrections bc1 = 1-beta1^t, bc2 = 1-beta2^t.
  void (*adam_step_f32)(float* p, const float* g, float* m, float* v, size_t n,
                        float lr, float beta1, float beta2, float eps,
                        float bc1, float bc2);
};

enum class Backend { scalar, avx2 };

const KernelTable& scalar_table();
#if defined(ULAB_BUILD_AVX2)
const KernelTable& avx2_table();
#endif

bool avx2_supported();

// Active backend: best available by default, ULAB_KERNELS=scalar|avx2
// overrides, set_backend overrides both. Returns false if unavailable.
bool set_backend(Backend b);
Backend active_backend();
const KernelTable& active();
std::string backend_name();

// Typed shims so numeric code can be written once for float and double.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);
template <>
inline void gemm<float>(bool ta, bool tb, int m, int n, int k, float alpha,
                        const float* a, int lda, const float* b, int ldb,
                        float beta, float* c, int ldc) {
  active().sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
template <>
inline void gemm<double>(bool ta, bool tb, int m, int n, int k, double alpha,
                         const double* a, int lda, const double* b, int ldb,
                         double beta, double* c, int ldc) {
  active().dgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gelu_fwd(const float* x, float* y, size_t n) { active().gelu_fwd_f32(x, y, n); }
inline void gelu_fwd(const double* x, double* y, size_t n) { active().gelu_fwd_f64(x, y, n); }
inline void gelu_bwd(const float* x, const float* dy, float* dx, size_t n) {
  active().gelu_bwd_f32(x, dy, dx, n);
}
inline void gelu_bwd(const double* x, const double* dy, double* dx, size_t n) {
  active().gelu_bwd_f64(x, dy, dx, n);
}

inline void layernorm_fwd(const float* x, const float* gamma, const float* beta, float* y,
                          float* mean, float* rstd, int rows, int d) {
  active().layernorm_fwd_f32(x, gamma, beta, y, mean, rstd, rows, d);
}
inline void layernorm_fwd(const double* x, const double* gamma, const double* beta, double* y,
                          double* mean, double* rstd, int rows, int d) {
  active().layernorm_fwd_f64(x, gamma, beta, y, mean, rstd, rows, d);
}
inline void layernorm_bwd(const float* x, const float* gamma, const float* mean,
                          const float* rstd, const float* dy, float* dx, float* dgamma,
                          float* dbeta, int rows, int d) {
  active().layernorm_bwd_f32(x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, d);
}
inline void layernorm_bwd(const double* x, const double* gamma, const double* mean,
                          const double* rstd, const double* dy, double* dx, double* dgamma,
                          double* dbeta, int rows, int d) {
  active().layernorm_bwd_f64(x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, d);
}

inline void softmax_rows(const float* x, float* y, int rows, int n) {
  active().softmax_rows_f32(x, y, rows, n);
}
inline void softmax_rows(const double* x, double* y, int rows, int n) {
  active().softmax_rows_f64(x, y, rows, n);
}

inline void add(float* y, const float* x, size_t n) { active().add_f32(y, x, n); }
inline void add(double* y, const double* x, size_t n) { active().add_f64(y, x, n); }

inline float dot(const float* a, const float* b, size_t n) { return active().dot_f32(a, b, n); }
inline double dot(const double* a, const double* b, size_t n) { return active().dot_f64(a, b, n); }

inline void adam_step(float* p, const float* g, float* m, float* v, size_t n, float lr,
                      float beta1, float beta2, float eps, float bc1, float bc2) {
  active().adam_step_f32(p, g, m, v, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace ulab::kernels
