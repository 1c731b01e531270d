// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <vector>

#include "tabopt/tensor.hpp"

namespace tabopt {

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvectors land in the columns of q, sorted by decreasing eigenvalue.
/// Returns false when the sweep limit is hit before off-diagonals vanish
/// (callers keep their previous basis in that case).
template <std::floating_point Real>
bool jacobi_eigh(const TensorT<Real>& a, TensorT<Real>& q, std::vector<Real>& eigenvalues,
                 int max_sweeps = 50) {
    if (a.rank() != 2 || a.rows() != a.cols()) throw ConfigError("jacobi_eigh: square matrix required");
    const int n = a.rows();
    TensorT<Real> d = a;
    q = TensorT<Real>::zeros({n, n});
    for (int i = 0; i < n; ++i) q(i, i) = Real(1);

    Real scale = 0;
    for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(d(i, i)));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) scale = std::max(scale, std::abs(d(i, j)));
    if (scale == Real(0)) scale = Real(1);
    const Real tol = scale * std::numeric_limits<Real>::epsilon() * n;

    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        Real off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += d(i, j) * d(i, j);
        if (std::sqrt(off) <= tol) {
            converged = true;
            break;
        }
        for (int p = 0; p < n - 1; ++p) {
            for (int r = p + 1; r < n; ++r) {
                const Real apq = d(p, r);
                if (std::abs(apq) <= tol * Real(1e-3)) continue;
                const Real app = d(p, p), aqq = d(r, r);
                const Real theta = (aqq - app) / (2 * apq);
                const Real t = (theta >= 0 ? Real(1) : Real(-1)) /
                               (std::abs(theta) + std::sqrt(theta * theta + 1));
                const Real cs = Real(1) / std::sqrt(t * t + 1);
                const Real sn = t * cs;
                for (int i = 0; i < n; ++i) {
                    const Real dip = d(i, p), dir = d(i, r);
                    d(i, p) = cs * dip - sn * dir;
                    d(i, r) = sn * dip + cs * dir;
                }
                for (int i = 0; i < n; ++i) {
                    const Real dpi = d(p, i), dri = d(r, i);
                    d(p, i) = cs * dpi - sn * dri;
                    d(r, i) = sn * dpi + cs * dri;
                }
                for (int i = 0; i < n; ++i) {
                    const Real qip = q(i, p), qir = q(i, r);
                    q(i, p) = cs * qip - sn * qir;
                    q(i, r) = sn * qip + cs * qir;
                }
            }
        }
    }
    if (!converged) {
        Real off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += d(i, j) * d(i, j);
        converged = std::sqrt(off) <= tol;
        if (!converged) return false;
    }

    eigenvalues.assign(static_cast<std::size_t>(n), Real(0));
    for (int i = 0; i < n; ++i) eigenvalues[static_cast<std::size_t>(i)] = d(i, i);

    // Sort by decreasing eigenvalue, permuting columns of q to match.
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        return eigenvalues[static_cast<std::size_t>(x)] > eigenvalues[static_cast<std::size_t>(y)];
    });
    TensorT<Real> q_sorted = TensorT<Real>::zeros({n, n});
    std::vector<Real> ev_sorted(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        const int src = order[static_cast<std::size_t>(c)];
        ev_sorted[static_cast<std::size_t>(c)] = eigenvalues[static_cast<std::size_t>(src)];
        for (int i = 0; i < n; ++i) q_sorted(i, c) = q(i, src);
    }
    q = std::move(q_sorted);
    eigenvalues = std::move(ev_sorted);
    return true;
}

}  // namespace tabopt
