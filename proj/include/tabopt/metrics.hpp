// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tabopt/common.hpp"
#include "tabopt/data.hpp"

namespace tabopt {

/// Fraction of rows whose argmax probability matches the label.
inline double accuracy(const Matrix& probs, const std::vector<int>& labels) {
    if (probs.rows() != static_cast<int>(labels.size()))
        throw ConfigError("accuracy: size mismatch");
    int hits = 0;
    for (int i = 0; i < probs.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > probs(i, best)) best = j;
        if (best == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

/// ROC-AUC from the rank statistic; tied scores receive midranks.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ConfigError("roc_auc: size mismatch");
    const auto n = scores.size();
    std::size_t n_pos = 0;
    for (const int y : labels) n_pos += y == 1 ? 1 : 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ConfigError("undefined AUC: single-class labels");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double n_pos_d = static_cast<double>(n_pos);
    return (rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0) /
           (n_pos_d * static_cast<double>(n_neg));
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size() || pred.empty()) throw ConfigError("rmse: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Internal comparisons run on a higher-is-better orientation; RMSE enters
/// negated and is reported positive.
inline double oriented_score(MetricKind metric, double value) {
    return metric == MetricKind::rmse ? -value : value;
}

}  // namespace tabopt
