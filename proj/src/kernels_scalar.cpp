#include <cmath>
#include <cstring>

#include "ulab/kernels.hpp"

// Reference kernels. Plain loops, fixed evaluation order; every SIMD variant
// is tested against these.
namespace ulab::kernels {
namespace {

template <typename T>
inline T opval(const T* a, int lda, bool trans, int row, int col) {
  return trans ? a[static_cast<size_t>(col) * lda + row]
               : a[static_cast<size_t>(row) * lda + col];
}

template <typename T>
void gemm_ref(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
              const T* b, int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (alpha == T(0) || k == 0) return;

  if (!ta && !tb) {
    // axpy form: c[i,:] += alpha*a[i,l] * b[l,:]
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<size_t>(i) * ldc;
      const T* arow = a + static_cast<size_t>(i) * lda;
      for (int l = 0; l < k; ++l) {
        const T s = alpha * arow[l];
        if (s == T(0)) continue;
        const T* brow = b + static_cast<size_t>(l) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
      }
    }
  } else if (ta && !tb) {
    for (int l = 0; l < k; ++l) {
      const T* arow = a + static_cast<size_t>(l) * lda;  // stored k x m
      const T* brow = b + static_cast<size_t>(l) * ldb;
      for (int i = 0; i < m; ++i) {
        const T s = alpha * arow[i];
        if (s == T(0)) continue;
        T* crow = c + static_cast<size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) crow[j] += s * brow[j];
      }
    }
  } else if (!ta && tb) {
    // dot form with four running sums for some ILP; order is fixed.
    for (int i = 0; i < m; ++i) {
      const T* arow = a + static_cast<size_t>(i) * lda;
      T* crow = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        const T* brow = b + static_cast<size_t>(j) * ldb;  // stored n x k
        T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        int l = 0;
        for (; l + 4 <= k; l += 4) {
          s0 += arow[l] * brow[l];
          s1 += arow[l + 1] * brow[l + 1];
          s2 += arow[l + 2] * brow[l + 2];
          s3 += arow[l + 3] * brow[l + 3];
        }
        for (; l < k; ++l) s0 += arow[l] * brow[l];
        crow[j] += alpha * ((s0 + s1) + (s2 + s3));
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<size_t>(i) * ldc;
      for (int j = 0; j < n; ++j) {
        T s = 0;
        for (int l = 0; l < k; ++l) s += opval(a, lda, true, i, l) * opval(b, ldb, true, l, j);
        crow[j] += alpha * s;
      }
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

template <typename T>
void gelu_fwd_ref(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const T xi = x[i];
    const T u = static_cast<T>(kGeluC) * (xi + static_cast<T>(kGeluK) * xi * xi * xi);
    y[i] = static_cast<T>(0.5) * xi * (static_cast<T>(1) + std::tanh(u));
  }
}

template <typename T>
void gelu_bwd_ref(const T* x, const T* dy, T* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const T xi = x[i];
    const T u = static_cast<T>(kGeluC) * (xi + static_cast<T>(kGeluK) * xi * xi * xi);
    const T t = std::tanh(u);
    const T du = static_cast<T>(kGeluC) * (static_cast<T>(1) + static_cast<T>(3 * kGeluK) * xi * xi);
    const T g = static_cast<T>(0.5) * (static_cast<T>(1) + t) +
                static_cast<T>(0.5) * xi * (static_cast<T>(1) - t * t) * du;
    dx[i] = dy[i] * g;
  }
}

template <typename T>
void layernorm_fwd_ref(const T* x, const T* gamma, const T* beta, T* y, T* mean, T* rstd,
                       int rows, int d) {
  const T eps = static_cast<T>(1e-5);
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * d;
    T* yr = y + static_cast<size_t>(r) * d;
    T mu = 0;
    for (int i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (int i = 0; i < d; ++i) {
      const T dv = xr[i] - mu;
      var += dv * dv;
    }
    var /= static_cast<T>(d);
    const T rs = static_cast<T>(1) / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

template <typename T>
void layernorm_bwd_ref(const T* x, const T* gamma, const T* mean, const T* rstd, const T* dy,
                       T* dx, T* dgamma, T* dbeta, int rows, int d) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * d;
    const T* dyr = dy + static_cast<size_t>(r) * d;
    T* dxr = dx + static_cast<size_t>(r) * d;
    const T mu = mean[r];
    const T rs = rstd[r];

    T sum_dyg = 0, sum_dyg_xhat = 0;
    for (int i = 0; i < d; ++i) {
      const T xhat = (xr[i] - mu) * rs;
      const T dyg = dyr[i] * gamma[i];
      sum_dyg += dyg;
      sum_dyg_xhat += dyg * xhat;
      dgamma[i] += dyr[i] * xhat;
      dbeta[i] += dyr[i];
    }
    sum_dyg /= static_cast<T>(d);
    sum_dyg_xhat /= static_cast<T>(d);
    for (int i = 0; i < d; ++i) {
      const T xhat = (xr[i] - mu) * rs;
      const T dyg = dyr[i] * gamma[i];
      dxr[i] = rs * (dyg - sum_dyg - xhat * sum_dyg_xhat);
    }
  }
}

template <typename T>
void softmax_rows_ref(const T* x, T* y, int rows, int n) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * n;
    T* yr = y + static_cast<size_t>(r) * n;
    T mx = xr[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    T sum = 0;
    for (int i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const T inv = static_cast<T>(1) / sum;
    for (int i = 0; i < n; ++i) yr[i] *= inv;
  }
}

template <typename T>
void add_ref(T* y, const T* x, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += x[i];
}

template <typename T>
T dot_ref(const T* a, const T* b, size_t n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void adam_step_ref(float* p, const float* g, float* m, float* v, size_t n, float lr,
                   float beta1, float beta2, float eps, float bc1, float bc2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mhat = m[i] / bc1;
    const float vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table = {
      "scalar",
      &gemm_ref<float>,
      &gemm_ref<double>,
      &gelu_fwd_ref<float>,
      &gelu_bwd_ref<float>,
      &gelu_fwd_ref<double>,
      &gelu_bwd_ref<double>,
      &layernorm_fwd_ref<float>,
      &layernorm_bwd_ref<float>,
      &layernorm_fwd_ref<double>,
      &layernorm_bwd_ref<double>,
      &softmax_rows_ref<float>,
      &softmax_rows_ref<double>,
      &add_ref<float>,
      &add_ref<double>,
      &dot_ref<float>,
      &dot_ref<double>,
      &adam_step_ref,
  };
  return table;
}

}  // namespace ulab::kernels
