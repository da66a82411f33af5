#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "ulab/kernels.hpp"

// AVX2+FMA kernel variants. This TU is compiled with -mavx2 -mfma and is only
// entered through the runtime-dispatched table.
namespace ulab::kernels {
namespace {

// ---------------------------------------------------------------------------
// GEMM: packed panels with a register-tile microkernel.
// Blocking: KC-deep slabs; within a slab, MC-row blocks of packed A stay in
// L2 while each packed B panel (KC x NR) stays in L1.
// ---------------------------------------------------------------------------

constexpr int kKC = 256;
constexpr int kMC = 120;  // multiple of MR

template <typename T>
inline T opval(const T* a, int lda, bool trans, int row, int col) {
  return trans ? a[static_cast<size_t>(col) * lda + row]
               : a[static_cast<size_t>(row) * lda + col];
}

// Packs op(A)[i0:i0+mb, k0:k0+kc] into row panels of MR, k-major within a
// panel, rows zero-padded to MR.
template <typename T, int MR>
void pack_a(bool ta, const T* a, int lda, int i0, int mb, int k0, int kc, T* ap) {
  for (int p = 0; p < mb; p += MR) {
    const int pr = std::min(MR, mb - p);
    T* panel = ap + static_cast<size_t>(p / MR) * kc * MR;
    for (int kk = 0; kk < kc; ++kk) {
      for (int ii = 0; ii < pr; ++ii)
        panel[static_cast<size_t>(kk) * MR + ii] = opval(a, lda, ta, i0 + p + ii, k0 + kk);
      for (int ii = pr; ii < MR; ++ii) panel[static_cast<size_t>(kk) * MR + ii] = T(0);
    }
  }
}

// Packs op(B)[k0:k0+kc, 0:n] into column panels of NR, zero-padded.
template <typename T, int NR>
void pack_b(bool tb, const T* b, int ldb, int k0, int kc, int n, T* bp) {
  const int np = (n + NR - 1) / NR;
  for (int p = 0; p < np; ++p) {
    const int j0 = p * NR;
    const int pc = std::min(NR, n - j0);
    T* panel = bp + static_cast<size_t>(p) * kc * NR;
    for (int kk = 0; kk < kc; ++kk) {
      for (int jj = 0; jj < pc; ++jj)
        panel[static_cast<size_t>(kk) * NR + jj] = opval(b, ldb, tb, k0 + kk, j0 + jj);
      for (int jj = pc; jj < NR; ++jj) panel[static_cast<size_t>(kk) * NR + jj] = T(0);
    }
  }
}

// 6x16 f32 tile: 12 ymm accumulators.
void mk_f32_6x16(const float* ap, const float* bp, int kc, float* tile) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int kk = 0; kk < kc; ++kk) {
    const __m256 b0 = _mm256_loadu_ps(bp + static_cast<size_t>(kk) * 16);
    const __m256 b1 = _mm256_loadu_ps(bp + static_cast<size_t>(kk) * 16 + 8);
    const float* arow = ap + static_cast<size_t>(kk) * 6;
    __m256 av;
    av = _mm256_broadcast_ss(arow + 0);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(arow + 1);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(arow + 2);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(arow + 3);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
    av = _mm256_broadcast_ss(arow + 4);
    c40 = _mm256_fmadd_ps(av, b0, c40);
    c41 = _mm256_fmadd_ps(av, b1, c41);
    av = _mm256_broadcast_ss(arow + 5);
    c50 = _mm256_fmadd_ps(av, b0, c50);
    c51 = _mm256_fmadd_ps(av, b1, c51);
  }
  _mm256_storeu_ps(tile + 0, c00);
  _mm256_storeu_ps(tile + 8, c01);
  _mm256_storeu_ps(tile + 16, c10);
  _mm256_storeu_ps(tile + 24, c11);
  _mm256_storeu_ps(tile + 32, c20);
  _mm256_storeu_ps(tile + 40, c21);
  _mm256_storeu_ps(tile + 48, c30);
  _mm256_storeu_ps(tile + 56, c31);
  _mm256_storeu_ps(tile + 64, c40);
  _mm256_storeu_ps(tile + 72, c41);
  _mm256_storeu_ps(tile + 80, c50);
  _mm256_storeu_ps(tile + 88, c51);
}

// 6x8 f64 tile.
void mk_f64_6x8(const double* ap, const double* bp, int kc, double* tile) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (int kk = 0; kk < kc; ++kk) {
    const __m256d b0 = _mm256_loadu_pd(bp + static_cast<size_t>(kk) * 8);
    const __m256d b1 = _mm256_loadu_pd(bp + static_cast<size_t>(kk) * 8 + 4);
    const double* arow = ap + static_cast<size_t>(kk) * 6;
    __m256d av;
    av = _mm256_broadcast_sd(arow + 0);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(arow + 1);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(arow + 2);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(arow + 3);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
    av = _mm256_broadcast_sd(arow + 4);
    c40 = _mm256_fmadd_pd(av, b0, c40);
    c41 = _mm256_fmadd_pd(av, b1, c41);
    av = _mm256_broadcast_sd(arow + 5);
    c50 = _mm256_fmadd_pd(av, b0, c50);
    c51 = _mm256_fmadd_pd(av, b1, c51);
  }
  _mm256_storeu_pd(tile + 0, c00);
  _mm256_storeu_pd(tile + 4, c01);
  _mm256_storeu_pd(tile + 8, c10);
  _mm256_storeu_pd(tile + 12, c11);
  _mm256_storeu_pd(tile + 16, c20);
  _mm256_storeu_pd(tile + 20, c21);
  _mm256_storeu_pd(tile + 24, c30);
  _mm256_storeu_pd(tile + 28, c31);
  _mm256_storeu_pd(tile + 32, c40);
  _mm256_storeu_pd(tile + 36, c41);
  _mm256_storeu_pd(tile + 40, c50);
  _mm256_storeu_pd(tile + 44, c51);
}

template <typename T, int MR, int NR, void (*MK)(const T*, const T*, int, T*)>
void gemm_packed(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
                 const T* b, int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == T(0)) return;

  const int np = (n + NR - 1) / NR;
  thread_local std::vector<T> bp_buf, ap_buf;
  bp_buf.resize(static_cast<size_t>(np) * kKC * NR);
  ap_buf.resize(static_cast<size_t>(kMC / MR) * kKC * MR);
  alignas(32) T tile[MR * NR];

  for (int k0 = 0; k0 < k; k0 += kKC) {
    const int kc = std::min(kKC, k - k0);
    pack_b<T, NR>(tb, b, ldb, k0, kc, n, bp_buf.data());
    for (int i0 = 0; i0 < m; i0 += kMC) {
      const int mb = std::min(kMC, m - i0);
      pack_a<T, MR>(ta, a, lda, i0, mb, k0, kc, ap_buf.data());
      const int nr_panels = (mb + MR - 1) / MR;
      for (int jp = 0; jp < np; ++jp) {
        const T* bpanel = bp_buf.data() + static_cast<size_t>(jp) * kc * NR;
        const int j0 = jp * NR;
        const int jc = std::min(NR, n - j0);
        for (int ip = 0; ip < nr_panels; ++ip) {
          const T* apanel = ap_buf.data() + static_cast<size_t>(ip) * kc * MR;
          MK(apanel, bpanel, kc, tile);
          const int ic = std::min(MR, mb - ip * MR);
          for (int ii = 0; ii < ic; ++ii) {
            T* crow = c + static_cast<size_t>(i0 + ip * MR + ii) * ldc + j0;
            const T* trow = tile + static_cast<size_t>(ii) * NR;
            for (int jj = 0; jj < jc; ++jj) crow[jj] += alpha * trow[jj];
          }
        }
      }
    }
  }
}

void sgemm_avx2(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                const float* b, int ldb, float beta, float* c, int ldc) {
  gemm_packed<float, 6, 16, mk_f32_6x16>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void dgemm_avx2(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                const double* b, int ldb, double beta, double* c, int ldc) {
  gemm_packed<double, 6, 8, mk_f64_6x8>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// ---------------------------------------------------------------------------
// Vector transcendentals (Cephes-style expf) and the GELU pair built on them.
// ---------------------------------------------------------------------------

inline __m256 exp256_ps(__m256 x) {
  const __m256 exp_hi = _mm256_set1_ps(88.3762626647950f);
  const __m256 exp_lo = _mm256_set1_ps(-88.3762626647949f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 p0 = _mm256_set1_ps(1.9875691500e-4f);
  const __m256 p1 = _mm256_set1_ps(1.3981999507e-3f);
  const __m256 p2 = _mm256_set1_ps(8.3334519073e-3f);
  const __m256 p3 = _mm256_set1_ps(4.1665795894e-2f);
  const __m256 p4 = _mm256_set1_ps(1.6666665459e-1f);
  const __m256 p5 = _mm256_set1_ps(5.0000001201e-1f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(_mm256_max_ps(x, exp_lo), exp_hi);

  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = p0;
  y = _mm256_fmadd_ps(y, x, p1);
  y = _mm256_fmadd_ps(y, x, p2);
  y = _mm256_fmadd_ps(y, x, p3);
  y = _mm256_fmadd_ps(y, x, p4);
  y = _mm256_fmadd_ps(y, x, p5);
  y = _mm256_fmadd_ps(y, z, _mm256_add_ps(x, one));

  const __m256i emm0 =
      _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvttps_epi32(fx), _mm256_set1_epi32(0x7f)), 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(emm0));
}

// tanh via exp(2u); u is clamped where tanh is saturated in f32 anyway.
inline __m256 tanh256_ps(__m256 u) {
  const __m256 cap = _mm256_set1_ps(9.0f);
  u = _mm256_min_ps(_mm256_max_ps(u, _mm256_sub_ps(_mm256_setzero_ps(), cap)), cap);
  const __m256 e = exp256_ps(_mm256_add_ps(u, u));
  const __m256 one = _mm256_set1_ps(1.0f);
  return _mm256_div_ps(_mm256_sub_ps(e, one), _mm256_add_ps(e, one));
}

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluK = 0.044715f;

void gelu_fwd_avx2(const float* x, float* y, size_t n) {
  const __m256 cc = _mm256_set1_ps(kGeluC);
  const __m256 ck = _mm256_set1_ps(kGeluK);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 x3 = _mm256_mul_ps(xv, _mm256_mul_ps(xv, xv));
    const __m256 u = _mm256_mul_ps(cc, _mm256_fmadd_ps(ck, x3, xv));
    const __m256 t = tanh256_ps(u);
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_mul_ps(half, xv), _mm256_add_ps(one, t)));
  }
  for (; i < n; ++i) {
    const float xi = x[i];
    const float u = kGeluC * (xi + kGeluK * xi * xi * xi);
    y[i] = 0.5f * xi * (1.0f + std::tanh(u));
  }
}

void gelu_bwd_avx2(const float* x, const float* dy, float* dx, size_t n) {
  const __m256 cc = _mm256_set1_ps(kGeluC);
  const __m256 ck = _mm256_set1_ps(kGeluK);
  const __m256 ck3 = _mm256_set1_ps(3.0f * kGeluK);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 x2 = _mm256_mul_ps(xv, xv);
    const __m256 u = _mm256_mul_ps(cc, _mm256_fmadd_ps(ck, _mm256_mul_ps(x2, xv), xv));
    const __m256 t = tanh256_ps(u);
    const __m256 du = _mm256_mul_ps(cc, _mm256_fmadd_ps(ck3, x2, one));
    const __m256 sech2 = _mm256_fnmadd_ps(t, t, one);
    __m256 g = _mm256_mul_ps(half, _mm256_add_ps(one, t));
    g = _mm256_fmadd_ps(_mm256_mul_ps(half, xv), _mm256_mul_ps(sech2, du), g);
    _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dy + i), g));
  }
  for (; i < n; ++i) {
    const float xi = x[i];
    const float u = kGeluC * (xi + kGeluK * xi * xi * xi);
    const float t = std::tanh(u);
    const float du = kGeluC * (1.0f + 3.0f * kGeluK * xi * xi);
    dx[i] = dy[i] * (0.5f * (1.0f + t) + 0.5f * xi * (1.0f - t * t) * du);
  }
}

// ---------------------------------------------------------------------------
// Reductions and elementwise updates.
// ---------------------------------------------------------------------------

inline float hsum256(__m256 v) {
  const __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

float dot_avx2(const float* a, const float* b, size_t n) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
    s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), s2);
    s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), s3);
  }
  for (; i + 8 <= n; i += 8)
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
  float acc = hsum256(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void add_avx2(float* y, const float* x, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void layernorm_fwd_avx2(const float* x, const float* gamma, const float* beta, float* y,
                        float* mean, float* rstd, int rows, int d) {
  const float eps = 1e-5f;
  for (int r = 0; r < rows; ++r) {
    const float* xr = x + static_cast<size_t>(r) * d;
    float* yr = y + static_cast<size_t>(r) * d;

    __m256 acc = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= d; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(xr + i));
    float mu = hsum256(acc);
    for (; i < d; ++i) mu += xr[i];
    mu /= static_cast<float>(d);

    const __m256 mv = _mm256_set1_ps(mu);
    __m256 vacc = _mm256_setzero_ps();
    i = 0;
    for (; i + 8 <= d; i += 8) {
      const __m256 dv = _mm256_sub_ps(_mm256_loadu_ps(xr + i), mv);
      vacc = _mm256_fmadd_ps(dv, dv, vacc);
    }
    float var = hsum256(vacc);
    for (; i < d; ++i) {
      const float dv = xr[i] - mu;
      var += dv * dv;
    }
    var /= static_cast<float>(d);
    const float rs = 1.0f / std::sqrt(var + eps);

    const __m256 rsv = _mm256_set1_ps(rs);
    i = 0;
    for (; i + 8 <= d; i += 8) {
      const __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + i), mv), rsv);
      const __m256 out =
          _mm256_fmadd_ps(xh, _mm256_loadu_ps(gamma + i), _mm256_loadu_ps(beta + i));
      _mm256_storeu_ps(yr + i, out);
    }
    for (; i < d; ++i) yr[i] = (xr[i] - mu) * rs * gamma[i] + beta[i];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

void adam_step_avx2(float* p, const float* g, float* m, float* v, size_t n, float lr,
                    float beta1, float beta2, float eps, float bc1, float bc2) {
  const __m256 b1 = _mm256_set1_ps(beta1);
  const __m256 b2 = _mm256_set1_ps(beta2);
  const __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 ibc1 = _mm256_set1_ps(1.0f / bc1);
  const __m256 ibc2 = _mm256_set1_ps(1.0f / bc2);
  const __m256 ev = _mm256_set1_ps(eps);
  const __m256 lrv = _mm256_set1_ps(lr);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_loadu_ps(m + i);
    __m256 vv = _mm256_loadu_ps(v + i);
    mv = _mm256_fmadd_ps(ob1, gv, _mm256_mul_ps(b1, mv));
    vv = _mm256_fmadd_ps(ob2, _mm256_mul_ps(gv, gv), _mm256_mul_ps(b2, vv));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_mul_ps(mv, ibc1);
    const __m256 vhat = _mm256_mul_ps(vv, ibc2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), ev);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom);
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table = [] {
    KernelTable t = scalar_table();  // f64 elementwise ops stay scalar
    t.name = "avx2";
    t.sgemm = &sgemm_avx2;
    t.dgemm = &dgemm_avx2;
    t.gelu_fwd_f32 = &gelu_fwd_avx2;
    t.gelu_bwd_f32 = &gelu_bwd_avx2;
    t.layernorm_fwd_f32 = &layernorm_fwd_avx2;
    t.add_f32 = &add_avx2;
    t.dot_f32 = &dot_avx2;
    t.adam_step_f32 = &adam_step_avx2;
    return t;
  }();
  return table;
}

}  // namespace ulab::kernels
