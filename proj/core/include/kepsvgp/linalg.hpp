#pragma once

#include "kepsvgp/tensor.hpp"

namespace kepsvgp::linalg {

/// C = A * B for rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

/// Lower-triangular L with A = L L^T. `A` must be symmetric within sym_tol
/// and positive definite; a non-positive pivot raises NotPositiveDefinite.
Tensor cholesky(const Tensor& a, double sym_tol = 1e-10);

/// Solves A x = b through an existing Cholesky factor L (A = L L^T).
Tensor cholesky_solve(const Tensor& chol_lower, const Tensor& b);

struct SvdResult {
  Tensor u;      // n x r, orthonormal columns
  Tensor sigma;  // r singular values, descending, >= 0   (r = min(n, m))
  Tensor v;      // m x r, orthonormal columns
};

/// Thin SVD of an n x m matrix by one-sided Jacobi rotations. Intended as a
/// brute-force oracle for modest sizes, not a performance path.
SvdResult svd(const Tensor& a, int max_sweeps = 60, double tol = 1e-13);

Tensor svd_reconstruct(const SvdResult& s);

}  // namespace kepsvgp::linalg
