// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tabopt/common.hpp"

namespace tabopt {

/// Dense row-major tensor of rank 1..3. The scalar type is a template
/// parameter; double is the default everywhere, float is the fast mode.
template <std::floating_point Real>
class TensorT {
public:
    TensorT() = default;

    TensorT(std::vector<int> shape, std::vector<Real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_.empty() || shape_.size() > 3) throw ConfigError("tensor rank must be 1..3");
        std::size_t n = 1;
        for (const int d : shape_) {
            if (d <= 0) throw ConfigError("tensor dims must be positive");
            n *= static_cast<std::size_t>(d);
        }
        if (n != data_.size()) throw ConfigError("tensor data size does not match shape");
    }

    static TensorT zeros(std::vector<int> shape) {
        std::size_t n = 1;
        for (const int d : shape) n *= static_cast<std::size_t>(std::max(d, 0));
        return TensorT(std::move(shape), std::vector<Real>(n, Real(0)));
    }

    static TensorT full(std::vector<int> shape, Real value) {
        std::size_t n = 1;
        for (const int d : shape) n *= static_cast<std::size_t>(std::max(d, 0));
        return TensorT(std::move(shape), std::vector<Real>(n, value));
    }

    /// Convenience builder for rank-2 tensors from nested initializer lists.
    static TensorT matrix(std::initializer_list<std::initializer_list<Real>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        std::vector<Real> data;
        data.reserve(static_cast<std::size_t>(r) * c);
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) throw ConfigError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return TensorT({r, c}, std::move(data));
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::span<Real> values() { return data_; }
    std::span<const Real> values() const { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    Real operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

    Real& operator()(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    Real operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }

    Real& operator()(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    Real operator()(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const Real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const TensorT& a, const TensorT& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::vector<int> shape_;
    std::vector<Real> data_;
};

using Tensor = TensorT<double>;

template <std::floating_point Real>
void ensure_finite(const TensorT<Real>& t, const std::string& context) {
    if (!t.all_finite()) throw NumericError("non-finite value in " + context);
}

// ---------------------------------------------------------------------------
// Elementwise helpers. Optimizer inner loops live on these, so they stay
// branch-free and index from raw spans.
// ---------------------------------------------------------------------------

template <std::floating_point Real>
void add_inplace(TensorT<Real>& a, const TensorT<Real>& b) {
    if (!a.same_shape(b)) throw ConfigError("add: shape mismatch");
    Real* pa = a.data();
    const Real* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

template <std::floating_point Real>
void axpy_inplace(TensorT<Real>& a, Real alpha, const TensorT<Real>& b) {
    if (!a.same_shape(b)) throw ConfigError("axpy: shape mismatch");
    Real* pa = a.data();
    const Real* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += alpha * pb[i];
}

template <std::floating_point Real>
void scale_inplace(TensorT<Real>& a, Real alpha) {
    for (Real& v : a.values()) v *= alpha;
}

template <std::floating_point Real>
TensorT<Real> scaled(const TensorT<Real>& a, Real alpha) {
    TensorT<Real> out = a;
    scale_inplace(out, alpha);
    return out;
}

template <std::floating_point Real>
Real sum_squares(const TensorT<Real>& a) {
    Real s = 0;
    for (const Real v : a.values()) s += v * v;
    return s;
}

template <std::floating_point Real>
Real frobenius_norm(const TensorT<Real>& a) {
    return std::sqrt(sum_squares(a));
}

template <std::floating_point Real>
Real dot(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (!a.same_shape(b)) throw ConfigError("dot: shape mismatch");
    Real s = 0;
    const Real* pa = a.data();
    const Real* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += pa[i] * pb[i];
    return s;
}

// ---------------------------------------------------------------------------
// Rank-2 linear algebra.
// ---------------------------------------------------------------------------

template <std::floating_point Real>
TensorT<Real> transpose(const TensorT<Real>& a) {
    if (a.rank() != 2) throw ConfigError("transpose: rank-2 tensor required");
    TensorT<Real> out = TensorT<Real>::zeros({a.cols(), a.rows()});
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

namespace detail {

// C (m x n) += A (m x k) * B (k x n), all row-major contiguous.
// The i-k-j ordering streams B rows and vectorizes over j.
template <std::floating_point Real>
void gemm_accumulate(const Real* __restrict a, const Real* __restrict b, Real* __restrict c,
                     int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const Real av = arow[p];
            if (av == Real(0)) continue;
            const Real* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

/// C = A * B for rank-2 tensors.
template <std::floating_point Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ConfigError("matmul: rank-2 tensors required");
    if (a.cols() != b.rows())
        throw ConfigError("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()));
    TensorT<Real> out = TensorT<Real>::zeros({a.rows(), b.cols()});
    detail::gemm_accumulate(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
    return out;
}

/// C = A^T * B without materializing the transpose.
template <std::floating_point Real>
TensorT<Real> matmul_tn(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ConfigError("matmul_tn: rank-2 tensors required");
    if (a.rows() != b.rows()) throw ConfigError("matmul_tn: inner dims mismatch");
    const int m = a.cols(), k = a.rows(), n = b.cols();
    TensorT<Real> out = TensorT<Real>::zeros({m, n});
    Real* c = out.data();
    for (int p = 0; p < k; ++p) {
        const Real* arow = a.data() + static_cast<std::size_t>(p) * m;
        const Real* brow = b.data() + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const Real av = arow[i];
            if (av == Real(0)) continue;
            Real* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return out;
}

/// C = A * B^T. Materializes the transpose so the product runs on the
/// vectorizable kernel instead of a scalar reduction loop.
template <std::floating_point Real>
TensorT<Real> matmul_nt(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ConfigError("matmul_nt: rank-2 tensors required");
    if (a.cols() != b.cols()) throw ConfigError("matmul_nt: inner dims mismatch");
    return matmul(a, transpose(b));
}

}  // namespace tabopt
