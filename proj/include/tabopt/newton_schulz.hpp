// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>

#include "tabopt/constants.hpp"
#include "tabopt/tensor.hpp"

namespace tabopt {

/// Approximate the orthogonal polar factor U V^T of a matrix without an SVD.
///
/// The input is scaled to unit Frobenius norm, then run through a fixed
/// number of quintic iterations X <- a X + (b A + c A^2) X with A = X X^T and
/// coefficients (3.4445, -4.7750, 2.0315). That polynomial inflates small
/// singular values aggressively but has no fixed point at 1 (iterates cycle
/// in roughly [0.68, 1.13]), so a short cubic phase X <- 1.5 X - 0.5 A X
/// follows to contract them onto 1. Singular vectors are untouched
/// throughout, so the result depends only on the direction of the input,
/// not its scale. Tall inputs are transposed first so the Gram matrix stays
/// on the small side. An all-zero matrix is returned unchanged.
template <std::floating_point Real>
TensorT<Real> newton_schulz_orthogonalize(const TensorT<Real>& m,
                                          int iters = constants::kNewtonSchulzIters) {
    if (m.rank() != 2) throw ConfigError("newton_schulz: rank-2 tensor required");
    const Real norm = frobenius_norm(m);
    if (norm == Real(0)) return m;

    const bool tall = m.rows() > m.cols();
    TensorT<Real> x = tall ? transpose(m) : m;
    scale_inplace(x, Real(1) / norm);

    const Real a = static_cast<Real>(constants::kNewtonSchulzA);
    const Real b = static_cast<Real>(constants::kNewtonSchulzB);
    const Real c = static_cast<Real>(constants::kNewtonSchulzC);
    for (int it = 0; it < iters; ++it) {
        TensorT<Real> gram = matmul_nt(x, x);              // A = X X^T
        TensorT<Real> poly = matmul(gram, gram);           // A^2
        scale_inplace(poly, c);
        axpy_inplace(poly, b, gram);                       // b A + c A^2
        TensorT<Real> next = matmul(poly, x);
        axpy_inplace(next, a, x);                          // a X + (bA + cA^2) X
        x = std::move(next);
    }
    for (int it = 0; it < constants::kNewtonSchulzPolishIters; ++it) {
        TensorT<Real> gram = matmul_nt(x, x);
        TensorT<Real> next = matmul(gram, x);
        scale_inplace(next, Real(-0.5));
        axpy_inplace(next, Real(1.5), x);                  // 1.5 X - 0.5 A X
        x = std::move(next);
    }
    return tall ? transpose(x) : x;
}

}  // namespace tabopt
