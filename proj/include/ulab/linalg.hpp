#pragma once

#include <span>
#include <vector>

namespace ulab {

// Cholesky factorization of a symmetric positive-definite matrix
// (row-major n x n). Fails with errc::gate when the matrix is not PD.
class CholeskyFactor {
 public:
  static CholeskyFactor compute(std::vector<double> a, int n);

  // x = A^{-1} b
  std::vector<double> solve(std::span<const double> b) const;
  int dim() const { return n_; }

 private:
  std::vector<double> l_;  // lower triangle
  int n_ = 0;
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. Eigenvalues are
// returned in descending order; eigenvectors[k*n .. k*n+n) is the k-th
// eigenvector.
void eigh(const std::vector<double>& a, int n, std::vector<double>& eigenvalues,
          std::vector<double>& eigenvectors);

}  // namespace ulab
