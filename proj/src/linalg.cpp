#include "ulab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ulab/common.hpp"

namespace ulab {

CholeskyFactor CholeskyFactor::compute(std::vector<double> a, int n) {
  require(n >= 1 && a.size() == static_cast<size_t>(n) * n, errc::validation,
          "cholesky: bad dimensions");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<size_t>(i) * n + j];
      const double* li = a.data() + static_cast<size_t>(i) * n;
      const double* lj = a.data() + static_cast<size_t>(j) * n;
      double acc = 0.0;
      for (int k = 0; k < j; ++k) acc += li[k] * lj[k];
      s -= acc;
      if (i == j) {
        require(s > 0.0, errc::gate, "cholesky: matrix is not positive definite");
        a[static_cast<size_t>(i) * n + j] = std::sqrt(s);
      } else {
        a[static_cast<size_t>(i) * n + j] = s / a[static_cast<size_t>(j) * n + j];
      }
    }
    for (int j = i + 1; j < n; ++j) a[static_cast<size_t>(i) * n + j] = 0.0;
  }
  CholeskyFactor f;
  f.l_ = std::move(a);
  f.n_ = n;
  return f;
}

std::vector<double> CholeskyFactor::solve(std::span<const double> b) const {
  require(static_cast<int>(b.size()) == n_, errc::validation, "cholesky solve: bad rhs size");
  std::vector<double> y(n_);
  for (int i = 0; i < n_; ++i) {
    double s = b[i];
    const double* li = l_.data() + static_cast<size_t>(i) * n_;
    for (int k = 0; k < i; ++k) s -= li[k] * y[k];
    y[i] = s / li[i];
  }
  for (int i = n_ - 1; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < n_; ++k) s -= l_[static_cast<size_t>(k) * n_ + i] * y[k];
    y[i] = s / l_[static_cast<size_t>(i) * n_ + i];
  }
  return y;
}

void eigh(const std::vector<double>& a_in, int n, std::vector<double>& eigenvalues,
          std::vector<double>& eigenvectors) {
  require(n >= 1 && a_in.size() == static_cast<size_t>(n) * n, errc::validation,
          "eigh: bad dimensions");
  std::vector<double> a = a_in;
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += a[static_cast<size_t>(i) * n + j] *
                                           a[static_cast<size_t>(i) * n + j];
    return std::sqrt(2.0 * s);
  };

  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps && off_norm() > 1e-13 * n; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p) * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[static_cast<size_t>(p) * n + p];
        const double aqq = a[static_cast<size_t>(q) * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[static_cast<size_t>(k) * n + p];
          const double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[static_cast<size_t>(p) * n + k];
          const double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[static_cast<size_t>(k) * n + p];
          const double vkq = v[static_cast<size_t>(k) * n + q];
          v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (int i = 0; i < n; ++i) diag[i] = a[static_cast<size_t>(i) * n + i];
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return diag[x] > diag[y]; });

  eigenvalues.resize(n);
  eigenvectors.assign(static_cast<size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    eigenvalues[k] = diag[order[k]];
    for (int i = 0; i < n; ++i)
      eigenvectors[static_cast<size_t>(k) * n + i] = v[static_cast<size_t>(i) * n + order[k]];
  }
}

}  // namespace ulab
