// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tabopt/common.hpp"
#include "tabopt/constants.hpp"
#include "tabopt/data.hpp"
#include "tabopt/mathutil.hpp"

namespace tabopt {

/// Map a metric value onto a single higher-is-better scale: classification
/// scores pass through, regression RMSE becomes R^2 = 1 - (RMSE / sigma_y)^2
/// with sigma_y the test label standard deviation.
inline double to_unified_score(MetricKind metric, double value, double test_label_std = 0.0) {
    if (metric != MetricKind::rmse) return value;
    if (test_label_std <= 0.0)
        throw ConfigError("to_unified_score: regression needs positive test label std");
    const double ratio = value / test_label_std;
    return 1.0 - ratio * ratio;
}

/// Relative improvement over the baseline, in percent of unified score.
inline double delta_score_percent(double method_score, double baseline_score) {
    if (baseline_score <= 0.0)
        throw ConfigError("delta_score: baseline unified score must be positive");
    return 100.0 * (method_score / baseline_score - 1.0);
}

// ---------------------------------------------------------------------------
// Tier ranks
// ---------------------------------------------------------------------------

/// Ranks for methods already sorted by decreasing mean. The reference starts
/// at the top method; a method keeps the current rank unless the reference's
/// mean minus one reference standard deviation exceeds its mean, in which
/// case it opens the next tier and becomes the new reference.
inline std::vector<int> tier_ranks_sorted(const std::vector<std::pair<double, double>>& mu_sigma) {
    if (mu_sigma.empty()) throw ConfigError("tier_ranks: empty input");
    for (std::size_t i = 1; i < mu_sigma.size(); ++i)
        if (mu_sigma[i].first > mu_sigma[i - 1].first)
            throw ConfigError("tier_ranks: input must be sorted by decreasing mean");
    std::vector<int> ranks(mu_sigma.size());
    int rank = 1;
    std::size_t ref = 0;
    ranks[0] = 1;
    for (std::size_t i = 1; i < mu_sigma.size(); ++i) {
        const bool worse = mu_sigma[ref].first - mu_sigma[ref].second > mu_sigma[i].first;
        if (worse) {
            ++rank;
            ref = i;
        }
        ranks[i] = rank;
    }
    return ranks;
}

/// Same, for unsorted input; returned ranks match the input order.
inline std::vector<int> tier_ranks(const std::vector<std::pair<double, double>>& mu_sigma) {
    std::vector<std::size_t> order(mu_sigma.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return mu_sigma[a].first > mu_sigma[b].first;
    });
    std::vector<std::pair<double, double>> sorted;
    sorted.reserve(mu_sigma.size());
    for (const std::size_t i : order) sorted.push_back(mu_sigma[i]);
    const std::vector<int> sorted_ranks = tier_ranks_sorted(sorted);
    std::vector<int> ranks(mu_sigma.size());
    for (std::size_t i = 0; i < order.size(); ++i) ranks[order[i]] = sorted_ranks[i];
    return ranks;
}

// ---------------------------------------------------------------------------
// Welch's t-test
// ---------------------------------------------------------------------------

inline double sample_mean(const std::vector<double>& v) {
    double s = 0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
    const double m = sample_mean(v);
    double s = 0;
    for (const double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

/// Two-sided Welch p-value with Welch-Satterthwaite degrees of freedom.
inline double welch_p_value(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw ConfigError("welch: need at least 2 samples per side");
    for (const auto* v : {&a, &b})
        for (const double x : *v)
            if (!std::isfinite(x)) throw ConfigError("welch: non-finite sample");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double va = sample_var(a) / na, vb = sample_var(b) / nb;
    if (va + vb == 0.0) return 1.0;  // identical constants; callers special-case means
    const double t = (sample_mean(a) - sample_mean(b)) / std::sqrt(va + vb);
    const double nu = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    return 2.0 * (1.0 - student_t_cdf(std::abs(t), nu));
}

enum class Wtl { win, tie, loss };

inline const char* to_string(Wtl w) {
    switch (w) {
        case Wtl::win: return "win";
        case Wtl::tie: return "tie";
        case Wtl::loss: return "loss";
    }
    return "?";
}

/// Win/tie/loss of a against b on higher-is-better seed scores. Zero variance
/// on both sides degenerates to a comparison of means.
inline Wtl welch_wtl(const std::vector<double>& a, const std::vector<double>& b,
                     double alpha = constants::kWelchAlpha) {
    const double ma = sample_mean(a), mb = sample_mean(b);
    if (sample_var(a) == 0.0 && sample_var(b) == 0.0) {
        if (ma == mb) return Wtl::tie;
        return ma > mb ? Wtl::win : Wtl::loss;
    }
    const double p = welch_p_value(a, b);
    if (p < alpha) return ma > mb ? Wtl::win : Wtl::loss;
    return Wtl::tie;
}

// ---------------------------------------------------------------------------
// Efficiency overhead and percentiles
// ---------------------------------------------------------------------------

/// Mean across datasets of (method total time / baseline total time).
inline double time_overhead(const std::vector<double>& method_times,
                            const std::vector<double>& baseline_times) {
    if (method_times.size() != baseline_times.size() || method_times.empty())
        throw ConfigError("time_overhead: size mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < method_times.size(); ++i) {
        if (baseline_times[i] <= 0.0) throw ConfigError("time_overhead: nonpositive baseline time");
        acc += method_times[i] / baseline_times[i];
    }
    return acc / static_cast<double>(method_times.size());
}

/// Percentile with linear interpolation between closest ranks; p in [0, 100].
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw ConfigError("percentile: empty input");
    if (p < 0.0 || p > 100.0) throw ConfigError("percentile: p outside [0, 100]");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p / 100.0;
    const auto lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

}  // namespace tabopt
