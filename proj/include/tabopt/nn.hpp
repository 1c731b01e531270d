// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <vector>

#include "tabopt/params.hpp"
#include "tabopt/rng.hpp"
#include "tabopt/tensor.hpp"

// Dense layer kernels with hand-written backward passes. There is no tape;
// each model wires these together explicitly and keeps its own caches.

namespace tabopt {

/// y = x W + b for x[B x I], W[I x O], b[O].
template <std::floating_point Real>
TensorT<Real> linear_forward(const TensorT<Real>& x, const TensorT<Real>& w,
                             const TensorT<Real>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ConfigError("linear_forward: x and W must be rank-2, b rank-1");
    if (x.cols() != w.rows() || w.cols() != b.dim(0))
        throw ConfigError("linear_forward: shape mismatch");
    TensorT<Real> y = matmul(x, w);
    for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < y.cols(); ++j) y(i, j) += b(j);
    return y;
}

/// Gradients of the linear layer. dy is dL/dy; returns dL/dx and fills dw, db.
template <std::floating_point Real>
TensorT<Real> linear_backward(const TensorT<Real>& x, const TensorT<Real>& w,
                              const TensorT<Real>& dy, TensorT<Real>& dw, TensorT<Real>& db) {
    dw = matmul_tn(x, dy);
    db = TensorT<Real>::zeros({dy.cols()});
    for (int i = 0; i < dy.rows(); ++i)
        for (int j = 0; j < dy.cols(); ++j) db(j) += dy(i, j);
    return matmul_nt(dy, w);
}

template <std::floating_point Real>
TensorT<Real> relu(const TensorT<Real>& x) {
    TensorT<Real> y = x;
    for (Real& v : y.values())
        if (v < Real(0)) v = Real(0);
    return y;
}

/// dL/dx given the pre-activation input and dL/dy.
template <std::floating_point Real>
TensorT<Real> relu_backward(const TensorT<Real>& pre, const TensorT<Real>& dy) {
    TensorT<Real> dx = dy;
    const Real* p = pre.data();
    Real* d = dx.data();
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (p[i] <= Real(0)) d[i] = Real(0);
    return dx;
}

/// Inverted dropout: kept units scale by 1/(1-rate). Eval mode or rate 0 is
/// the identity. The mask is returned for the backward pass.
template <std::floating_point Real>
TensorT<Real> dropout(const TensorT<Real>& x, double rate, bool training, Rng& rng,
                      std::vector<std::uint8_t>* mask_out = nullptr) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    if (!training || rate == 0.0) {
        if (mask_out) mask_out->assign(x.size(), 1);
        return x;
    }
    TensorT<Real> y = x;
    if (mask_out) mask_out->assign(x.size(), 0);
    const Real scale = Real(1.0 / (1.0 - rate));
    Real* d = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (rng.uniform() < rate) {
            d[i] = Real(0);
        } else {
            d[i] *= scale;
            if (mask_out) (*mask_out)[i] = 1;
        }
    }
    return y;
}

template <std::floating_point Real>
TensorT<Real> dropout_backward(const std::vector<std::uint8_t>& mask, double rate,
                               const TensorT<Real>& dy) {
    TensorT<Real> dx = dy;
    if (rate == 0.0) return dx;
    const Real scale = Real(1.0 / (1.0 - rate));
    Real* d = dx.data();
    for (std::size_t i = 0; i < dx.size(); ++i) d[i] = mask[i] ? d[i] * scale : Real(0);
    return dx;
}

/// Row-wise softmax with max subtraction.
template <std::floating_point Real>
TensorT<Real> softmax(const TensorT<Real>& logits) {
    TensorT<Real> p = logits;
    for (int i = 0; i < p.rows(); ++i) {
        Real mx = p(i, 0);
        for (int j = 1; j < p.cols(); ++j) mx = std::max(mx, p(i, j));
        Real sum = 0;
        for (int j = 0; j < p.cols(); ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
        }
        for (int j = 0; j < p.cols(); ++j) p(i, j) /= sum;
    }
    return p;
}

/// Mean cross-entropy over the batch, log-sum-exp stabilized.
template <std::floating_point Real>
Real cross_entropy(const TensorT<Real>& logits, const std::vector<int>& labels) {
    ensure_finite(logits, "cross_entropy logits");
    if (static_cast<int>(labels.size()) != logits.rows())
        throw ConfigError("cross_entropy: batch size mismatch");
    Real loss = 0;
    for (int i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw ConfigError("cross_entropy: class index out of range");
        Real mx = logits(i, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
        Real sum = 0;
        for (int j = 0; j < logits.cols(); ++j) sum += std::exp(logits(i, j) - mx);
        loss += (mx + std::log(sum)) - logits(i, y);
    }
    return loss / Real(logits.rows());
}

/// Cross-entropy plus dL/dlogits in one pass: (softmax - onehot) / B.
template <std::floating_point Real>
Real cross_entropy_with_grad(const TensorT<Real>& logits, const std::vector<int>& labels,
                             TensorT<Real>& dlogits) {
    const Real loss = cross_entropy(logits, labels);
    dlogits = softmax(logits);
    const Real inv_b = Real(1) / Real(logits.rows());
    for (int i = 0; i < logits.rows(); ++i) {
        dlogits(i, labels[static_cast<std::size_t>(i)]) -= Real(1);
        for (int j = 0; j < logits.cols(); ++j) dlogits(i, j) *= inv_b;
    }
    return loss;
}

/// Mean squared error over batch and outputs.
template <std::floating_point Real>
Real mse(const TensorT<Real>& pred, const TensorT<Real>& target) {
    if (!pred.same_shape(target)) throw ConfigError("mse: shape mismatch");
    ensure_finite(pred, "mse predictions");
    Real s = 0;
    const Real* p = pred.data();
    const Real* t = target.data();
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Real d = p[i] - t[i];
        s += d * d;
    }
    return s / Real(pred.size());
}

template <std::floating_point Real>
Real mse_with_grad(const TensorT<Real>& pred, const TensorT<Real>& target,
                   TensorT<Real>& dpred) {
    const Real loss = mse(pred, target);
    dpred = pred;
    const Real scale = Real(2) / Real(pred.size());
    const Real* t = target.data();
    Real* d = dpred.data();
    for (std::size_t i = 0; i < pred.size(); ++i) d[i] = scale * (d[i] - t[i]);
    return loss;
}

/// Global-norm gradient clipping. If the l2 norm over all tensors exceeds
/// the threshold, every tensor is scaled by threshold/norm.
template <std::floating_point Real>
void global_grad_clip(GradSetT<Real>& grads, Real threshold) {
    if (threshold <= Real(0)) throw ConfigError("clip threshold must be positive");
    Real total = 0;
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) throw NumericError("non-finite gradient for " + name);
        total += sum_squares(g);
    }
    total = std::sqrt(total);
    if (total <= threshold) return;
    const Real scale = threshold / total;
    for (auto& [name, g] : grads) scale_inplace(g, scale);
}

}  // namespace tabopt
