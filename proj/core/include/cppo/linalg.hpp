// Copyright 2026 The Contraction PPO Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CPPO_LINALG_HPP_
#define CPPO_LINALG_HPP_

// Small dense symmetric linear algebra used by the variational, metric and
// certification code. Everything here works on n <= 8 matrices, so a cyclic
// Jacobi sweep is both simple and accurate to machine precision.

#include "cppo/types.hpp"

namespace cppo {

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns are orthonormal eigenvectors
};

struct JacobiOptions {
  double off_diagonal_tol = 1e-12;  // relative to the Frobenius norm
  int max_sweeps = 100;
};

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// The input is symmetrized first; asymmetry above 1e-9 (infinity norm,
// relative) is a ContractError, non-finite entries an InputError.
SymmetricEigen symmetric_eig(const Matrix& s, const JacobiOptions& opts = {});

// (X + X^T) / 2
Matrix sym(const Matrix& x);

// Q diag(lambda^-1/2) Q^T. Throws SingularMetricError when lambda_min <= floor.
Matrix inv_sqrt(const Matrix& m, double floor = 1e-10);

// Q diag(lambda^1/2) Q^T for a PSD matrix (negative round-off clamped to 0).
Matrix sqrt_psd(const Matrix& m);

// Largest singular value, as sqrt(lambda_max(X^T X)).
double spectral_norm(const Matrix& x);

// Largest absolute eigenvalue of a symmetric matrix.
double symmetric_spectral_norm(const Matrix& s);

}  // namespace cppo

#endif  // CPPO_LINALG_HPP_
