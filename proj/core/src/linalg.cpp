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

#include "cppo/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cppo/errors.hpp"

namespace cppo {

Matrix sym(const Matrix& x) { return 0.5 * (x + x.transpose()); }

SymmetricEigen symmetric_eig(const Matrix& s, const JacobiOptions& opts) {
  if (s.rows() != s.cols()) {
    throw ContractError("symmetric_eig: matrix is not square");
  }
  if (!s.allFinite()) {
    throw InputError("symmetric_eig: non-finite entry");
  }
  const Eigen::Index n = s.rows();
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw ContractError("symmetric_eig: matrix is not symmetric");
  }

  Matrix a = sym(s);
  Matrix v = Matrix::Identity(n, n);
  const double fro = a.norm();
  const double tol = opts.off_diagonal_tol * (fro > 0.0 ? fro : 1.0);

  auto off_mass = [&]() {
    double acc = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) acc += a(p, q) * a(p, q);
    return std::sqrt(2.0 * acc);
  };

  for (int sweep = 0; sweep < opts.max_sweeps && off_mass() > tol; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        // Rotation angle zeroing a(p,q) (Golub & Van Loan, sym.schur2).
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

Matrix inv_sqrt(const Matrix& m, double floor) {
  const SymmetricEigen eig = symmetric_eig(m);
  if (eig.values(0) <= floor) {
    throw SingularMetricError("inv_sqrt: smallest eigenvalue " +
                              std::to_string(eig.values(0)) + " below floor");
  }
  const Vector d = eig.values.cwiseSqrt().cwiseInverse();
  return eig.vectors * d.asDiagonal() * eig.vectors.transpose();
}

Matrix sqrt_psd(const Matrix& m) {
  const SymmetricEigen eig = symmetric_eig(m);
  const Vector d = eig.values.cwiseMax(0.0).cwiseSqrt();
  return eig.vectors * d.asDiagonal() * eig.vectors.transpose();
}

double spectral_norm(const Matrix& x) {
  if (x.size() == 0) return 0.0;
  // Gram matrix on the smaller side.
  const Matrix g = x.rows() < x.cols() ? Matrix(x * x.transpose())
                                       : Matrix(x.transpose() * x);
  const SymmetricEigen eig = symmetric_eig(sym(g));
  return std::sqrt(std::max(0.0, eig.values(eig.values.size() - 1)));
}

double symmetric_spectral_norm(const Matrix& s) {
  if (s.size() == 0) return 0.0;
  const SymmetricEigen eig = symmetric_eig(s);
  return std::max(std::abs(eig.values(0)), std::abs(eig.values(eig.values.size() - 1)));
}

}  // namespace cppo
