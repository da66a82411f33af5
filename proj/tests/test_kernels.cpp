#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "ulab/common.hpp"
#include "ulab/kernels.hpp"

using namespace ulab;
namespace k = ulab::kernels;
using ulab::testing::max_abs_diff;
using ulab::testing::max_rel_diff;
using ulab::testing::random_vec;

namespace {

// Independent oracle: textbook triple loop, no blocking, no reordering.
// abs_scale receives the magnitude of the accumulation, which bounds how far
// any reordered floating-point evaluation may legitimately drift.
template <typename T>
void gemm_naive(bool ta, bool tb, int m, int n, int kk, T alpha, const T* a, int lda,
                const T* b, int ldb, T beta, T* c, int ldc, double* abs_scale) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T s = 0;
      double abs_s = 0;
      for (int l = 0; l < kk; ++l) {
        const T av = ta ? a[size_t(l) * lda + i] : a[size_t(i) * lda + l];
        const T bv = tb ? b[size_t(j) * ldb + l] : b[size_t(l) * ldb + j];
        s += av * bv;
        abs_s += std::abs(double(av) * double(bv));
      }
      abs_scale[size_t(i) * n + j] = std::abs(double(alpha)) * abs_s +
                                     std::abs(double(beta) * double(c[size_t(i) * ldc + j]));
      c[size_t(i) * ldc + j] = alpha * s + beta * c[size_t(i) * ldc + j];
    }
  }
}

struct GemmCase {
  int m, n, k;
  bool ta, tb;
  double alpha, beta;
};

const GemmCase kGemmCases[] = {
    {1, 1, 1, false, false, 1.0, 0.0},    {3, 5, 2, false, false, 1.0, 0.0},
    {6, 16, 7, false, false, 1.0, 1.0},   {7, 17, 9, false, false, 2.5, 0.5},
    {13, 31, 64, false, true, 1.0, 0.0},  {32, 9, 40, true, false, 1.0, 1.0},
    {5, 7, 11, true, true, -1.0, 2.0},    {64, 48, 300, false, false, 1.0, 0.0},
    {130, 33, 257, false, true, 0.5, 1.0}, {21, 130, 512, true, false, 1.0, 0.0},
    {6, 8, 0, false, false, 1.0, 0.5},
};

template <typename T>
void check_gemm_against_naive(const k::KernelTable& table) {
  auto rng = make_rng(42);
  for (const auto& gc : kGemmCases) {
    const int lda = gc.ta ? gc.m : gc.k;
    const int ldb = gc.tb ? gc.k : gc.n;
    auto a = random_vec<T>(size_t(gc.ta ? gc.k : gc.m) * lda, rng);
    auto b = random_vec<T>(size_t(gc.tb ? gc.n : gc.k) * ldb, rng);
    auto c0 = random_vec<T>(size_t(gc.m) * gc.n, rng);
    auto c1 = c0;
    std::vector<double> scale(size_t(gc.m) * gc.n);
    gemm_naive<T>(gc.ta, gc.tb, gc.m, gc.n, gc.k, T(gc.alpha), a.data(), lda, b.data(), ldb,
                  T(gc.beta), c0.data(), gc.n, scale.data());
    if constexpr (std::is_same_v<T, float>) {
      table.sgemm(gc.ta, gc.tb, gc.m, gc.n, gc.k, T(gc.alpha), a.data(), lda, b.data(), ldb,
                  T(gc.beta), c1.data(), gc.n);
    } else {
      table.dgemm(gc.ta, gc.tb, gc.m, gc.n, gc.k, T(gc.alpha), a.data(), lda, b.data(), ldb,
                  T(gc.beta), c1.data(), gc.n);
    }
    const double tol = std::is_same_v<T, float> ? 1e-5 : 2e-14;
    CAPTURE(gc.m);
    CAPTURE(gc.n);
    CAPTURE(gc.k);
    double worst = 0.0;
    for (size_t i = 0; i < c0.size(); ++i) {
      const double err = std::abs(double(c0[i]) - double(c1[i]));
      worst = std::max(worst, err / (tol * (scale[i] + 1.0)));
    }
    CHECK(worst <= double(gc.k) + 1.0);  // per-term rounding budget
  }
}

}  // namespace

TEST_CASE("scalar gemm matches naive oracle") {
  check_gemm_against_naive<float>(k::scalar_table());
  check_gemm_against_naive<double>(k::scalar_table());
}

TEST_CASE("avx2 gemm matches naive oracle") {
  if (!k::avx2_supported()) return;
  REQUIRE(k::set_backend(k::Backend::avx2));
  check_gemm_against_naive<float>(k::active());
  check_gemm_against_naive<double>(k::active());
}

TEST_CASE("gelu backward matches central finite differences (f64)") {
  const auto& t = k::scalar_table();
  auto rng = make_rng(7);
  auto x = random_vec<double>(64, rng, 2.0);
  std::vector<double> dy(64, 1.0), dx(64);
  t.gelu_bwd_f64(x.data(), dy.data(), dx.data(), x.size());
  const double h = 1e-6;
  for (size_t i = 0; i < x.size(); ++i) {
    double xp = x[i] + h, xm = x[i] - h, yp, ym;
    t.gelu_fwd_f64(&xp, &yp, 1);
    t.gelu_fwd_f64(&xm, &ym, 1);
    const double fd = (yp - ym) / (2 * h);
    CHECK(std::abs(fd - dx[i]) < 1e-7);
  }
}

TEST_CASE("layernorm backward matches central finite differences (f64)") {
  const auto& t = k::scalar_table();
  auto rng = make_rng(11);
  const int rows = 3, d = 17;
  auto x = random_vec<double>(size_t(rows) * d, rng);
  auto gamma = random_vec<double>(d, rng);
  auto beta = random_vec<double>(d, rng);
  auto dy = random_vec<double>(size_t(rows) * d, rng);

  std::vector<double> y(size_t(rows) * d), mean(rows), rstd(rows);
  t.layernorm_fwd_f64(x.data(), gamma.data(), beta.data(), y.data(), mean.data(), rstd.data(),
                      rows, d);
  std::vector<double> dx(size_t(rows) * d), dgamma(d, 0.0), dbeta(d, 0.0);
  t.layernorm_bwd_f64(x.data(), gamma.data(), mean.data(), rstd.data(), dy.data(), dx.data(),
                      dgamma.data(), dbeta.data(), rows, d);

  auto loss = [&](const std::vector<double>& xx) {
    std::vector<double> yy(size_t(rows) * d), mm(rows), rr(rows);
    t.layernorm_fwd_f64(xx.data(), gamma.data(), beta.data(), yy.data(), mm.data(), rr.data(),
                        rows, d);
    double s = 0;
    for (size_t i = 0; i < yy.size(); ++i) s += yy[i] * dy[i];
    return s;
  };
  const double h = 1e-6;
  for (size_t i = 0; i < x.size(); i += 13) {
    auto xp = x;
    auto xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (loss(xp) - loss(xm)) / (2 * h);
    CHECK(std::abs(fd - dx[i]) < 1e-6);
  }
}

TEST_CASE("softmax rows normalize and match direct evaluation") {
  const auto& t = k::scalar_table();
  auto rng = make_rng(3);
  const int rows = 5, n = 33;
  auto x = random_vec<float>(size_t(rows) * n, rng, 3.0);
  std::vector<float> y(x.size());
  t.softmax_rows_f32(x.data(), y.data(), rows, n);
  for (int r = 0; r < rows; ++r) {
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += y[size_t(r) * n + i];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
  // spot check one entry against direct formula
  double denom = 0;
  for (int i = 0; i < n; ++i) denom += std::exp(double(x[i]) - double(x[7]));
  CHECK(double(y[7]) == doctest::Approx(std::exp(0.0) / denom).epsilon(1e-5));
}

TEST_CASE("avx2 variants are equivalent to scalar reference") {
  if (!k::avx2_supported()) return;
  REQUIRE(k::set_backend(k::Backend::avx2));
  const auto& sc = k::scalar_table();
  const auto& vx = k::active();
  REQUIRE(std::string(vx.name) == "avx2");
  auto rng = make_rng(99);

  SUBCASE("gelu fwd/bwd") {
    for (size_t n : {1u, 7u, 8u, 255u, 1024u}) {
      auto x = random_vec<float>(n, rng, 3.0);
      auto dy = random_vec<float>(n, rng);
      std::vector<float> y0(n), y1(n), d0(n), d1(n);
      sc.gelu_fwd_f32(x.data(), y0.data(), n);
      vx.gelu_fwd_f32(x.data(), y1.data(), n);
      sc.gelu_bwd_f32(x.data(), dy.data(), d0.data(), n);
      vx.gelu_bwd_f32(x.data(), dy.data(), d1.data(), n);
      CHECK(max_abs_diff(y0, y1) < 1e-5);
      CHECK(max_abs_diff(d0, d1) < 1e-4);
    }
  }

  SUBCASE("layernorm fwd") {
    const int rows = 9, d = 37;
    auto x = random_vec<float>(size_t(rows) * d, rng);
    auto g = random_vec<float>(d, rng);
    auto b = random_vec<float>(d, rng);
    std::vector<float> y0(x.size()), y1(x.size()), m0(rows), m1(rows), r0(rows), r1(rows);
    sc.layernorm_fwd_f32(x.data(), g.data(), b.data(), y0.data(), m0.data(), r0.data(), rows, d);
    vx.layernorm_fwd_f32(x.data(), g.data(), b.data(), y1.data(), m1.data(), r1.data(), rows, d);
    CHECK(max_abs_diff(y0, y1) < 1e-5);
    CHECK(max_abs_diff(m0, m1) < 1e-6);
  }

  SUBCASE("dot and add") {
    for (size_t n : {1u, 31u, 32u, 1000u}) {
      auto a = random_vec<float>(n, rng);
      auto b = random_vec<float>(n, rng);
      const double d0 = sc.dot_f32(a.data(), b.data(), n);
      const double d1 = vx.dot_f32(a.data(), b.data(), n);
      CHECK(std::abs(d0 - d1) < 1e-4 * (1.0 + std::abs(d0)));
      auto y0 = a;
      auto y1 = a;
      sc.add_f32(y0.data(), b.data(), n);
      vx.add_f32(y1.data(), b.data(), n);
      CHECK(max_abs_diff(y0, y1) == 0.0);
    }
  }

  SUBCASE("adam step") {
    const size_t n = 101;
    auto g = random_vec<float>(n, rng);
    auto p0 = random_vec<float>(n, rng);
    auto p1 = p0;
    std::vector<float> m0(n, 0.01f), v0(n, 0.02f);
    auto m1 = m0;
    auto v1 = v0;
    sc.adam_step_f32(p0.data(), g.data(), m0.data(), v0.data(), n, 1e-3f, 0.9f, 0.999f, 1e-8f,
                     0.1f, 0.01f);
    vx.adam_step_f32(p1.data(), g.data(), m1.data(), v1.data(), n, 1e-3f, 0.9f, 0.999f, 1e-8f,
                     0.1f, 0.01f);
    CHECK(max_abs_diff(p0, p1) < 1e-6);
    CHECK(max_abs_diff(m0, m1) < 1e-7);
    CHECK(max_abs_diff(v0, v1) < 1e-7);
  }

  SUBCASE("exp path inside gelu stays finite at extremes") {
    std::vector<float> x = {-100.0f, -9.5f, -1e-30f, 0.0f, 1e-30f, 9.5f, 100.0f};
    std::vector<float> y(x.size());
    vx.gelu_fwd_f32(x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(std::isfinite(y[i]));
    CHECK(y[0] == doctest::Approx(0.0f));
    CHECK(y[6] == doctest::Approx(100.0f));
  }
}

TEST_CASE("backend selection") {
  CHECK(k::set_backend(k::Backend::scalar));
  CHECK(k::backend_name() == "scalar");
  if (k::avx2_supported()) {
    CHECK(k::set_backend(k::Backend::avx2));
    CHECK(k::backend_name() == "avx2");
  }
}
