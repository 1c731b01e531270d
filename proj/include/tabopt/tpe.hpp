// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tabopt/constants.hpp"
#include "tabopt/search_space.hpp"

// Tree-structured Parzen estimator. After a uniform startup phase, trials
// split at the gamma quantile of the objective into good and bad sets; each
// dimension gets a kernel density per set (log space for log-uniform ranges,
// discrete for integer grids and categories, a branch probability plus an
// inner density for zero-or ranges). Of kTpeCandidates draws from the good
// model, the one maximizing the good/bad density ratio wins.

namespace tabopt {

struct TrialRecord {
    int index = 0;
    nlohmann::json config;
    std::optional<double> objective;  // present iff status == "ok"
    std::string status = "ok";

    nlohmann::json to_json() const {
        nlohmann::json j{{"index", index}, {"config", config}, {"status", status}};
        if (objective) j["objective"] = *objective;
        return j;
    }

    static TrialRecord from_json(const nlohmann::json& j) {
        TrialRecord r;
        r.index = j.at("index").get<int>();
        r.config = j.at("config");
        r.status = j.at("status").get<std::string>();
        if (j.contains("objective")) r.objective = j.at("objective").get<double>();
        return r;
    }
};

namespace tpe_detail {

inline double normal_kernel(double x, double center, double bw) {
    const double z = (x - center) / bw;
    return std::exp(-0.5 * z * z) / (bw * 2.5066282746310002);
}

/// Silverman bandwidth with a floor so single points and ties stay usable.
inline double bandwidth(const std::vector<double>& xs, double range) {
    const double n = static_cast<double>(xs.size());
    if (xs.empty() || range <= 0.0) return std::max(range * 0.1, 1e-12);
    double mean = 0;
    for (const double x : xs) mean += x;
    mean /= n;
    double var = 0;
    for (const double x : xs) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / std::max(n - 1.0, 1.0));
    double bw = 1.06 * sd * std::pow(n, -0.2);
    bw = std::max(bw, range * 0.01);
    return std::min(bw, range);
}

/// Continuous 1-d Parzen estimator over [lo, hi] with one uniform prior
/// pseudo-component. Works in transformed coordinates (log for log-uniform).
struct Kde {
    std::vector<double> centers;
    double bw = 1.0;
    double lo = 0.0, hi = 1.0;

    static Kde fit(std::vector<double> values, double lo, double hi) {
        Kde k;
        k.lo = lo;
        k.hi = hi;
        k.bw = bandwidth(values, hi - lo);
        k.centers = std::move(values);
        return k;
    }

    double pdf(double x) const {
        const double prior = 1.0 / (hi - lo);
        double acc = prior;
        for (const double c : centers) acc += normal_kernel(x, c, bw);
        return acc / (static_cast<double>(centers.size()) + 1.0);
    }

    double sample(Rng& rng) const {
        const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(centers.size()));
        if (pick == static_cast<std::int64_t>(centers.size())) return rng.uniform(lo, hi);
        const double raw = centers[static_cast<std::size_t>(pick)] + bw * rng.normal();
        return std::clamp(raw, lo, hi);
    }
};

/// Discrete estimator over an explicit grid: kernel-smoothed counts plus a
/// uniform prior, normalized into a sampling table.
struct DiscreteKde {
    std::vector<double> weights;  // per grid slot, normalized

    static DiscreteKde fit(const std::vector<double>& values, const DimUniformInt& dim) {
        DiscreteKde d;
        const auto g = static_cast<std::size_t>(dim.grid_size());
        d.weights.assign(g, 1.0 / static_cast<double>(g));  // prior
        const double bw = std::max(bandwidth(values, static_cast<double>(dim.hi - dim.lo)),
                                   static_cast<double>(dim.step));
        for (const double v : values)
            for (std::size_t k = 0; k < g; ++k)
                d.weights[k] += normal_kernel(static_cast<double>(dim.value_at(static_cast<std::int64_t>(k))), v, bw);
        double total = 0;
        for (const double w : d.weights) total += w;
        for (double& w : d.weights) w /= total;
        return d;
    }

    double pmf(std::size_t slot) const { return weights[slot]; }

    std::size_t sample(Rng& rng) const {
        const double u = rng.uniform();
        double acc = 0;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            acc += weights[k];
            if (u < acc) return k;
        }
        return weights.size() - 1;
    }
};

struct CategoricalKde {
    std::vector<double> weights;

    static CategoricalKde fit(const std::vector<std::string>& values, const DimCategorical& dim) {
        CategoricalKde c;
        const auto g = dim.values.size();
        c.weights.assign(g, 1.0 / static_cast<double>(g));
        for (const auto& v : values)
            for (std::size_t k = 0; k < g; ++k)
                if (dim.values[k] == v) c.weights[k] += 1.0;
        double total = 0;
        for (const double w : c.weights) total += w;
        for (double& w : c.weights) w /= total;
        return c;
    }
};

/// Per-dimension density pair (good and bad) able to score and sample.
class DimModel {
public:
    DimModel(const std::string& name, const Dim& dim, const std::vector<nlohmann::json>& good,
             const std::vector<nlohmann::json>& bad)
        : dim_(&dim) {
        auto collect_num = [&name](const std::vector<nlohmann::json>& configs) {
            std::vector<double> out;
            for (const auto& c : configs)
                if (c.contains(name)) out.push_back(c.at(name).get<double>());
            return out;
        };
        auto collect_str = [&name](const std::vector<nlohmann::json>& configs) {
            std::vector<std::string> out;
            for (const auto& c : configs)
                if (c.contains(name)) out.push_back(c.at(name).get<std::string>());
            return out;
        };

        if (const auto* di = std::get_if<DimUniformInt>(&dim)) {
            good_int_ = DiscreteKde::fit(collect_num(good), *di);
            bad_int_ = DiscreteKde::fit(collect_num(bad), *di);
        } else if (const auto* du = std::get_if<DimUniform>(&dim)) {
            good_kde_ = Kde::fit(collect_num(good), du->lo, du->hi);
            bad_kde_ = Kde::fit(collect_num(bad), du->lo, du->hi);
        } else if (const auto* dl = std::get_if<DimLogUniform>(&dim)) {
            auto logs = [](std::vector<double> v) {
                for (double& x : v) x = std::log(x);
                return v;
            };
            good_kde_ = Kde::fit(logs(collect_num(good)), std::log(dl->lo), std::log(dl->hi));
            bad_kde_ = Kde::fit(logs(collect_num(bad)), std::log(dl->lo), std::log(dl->hi));
        } else if (const auto* dz = std::get_if<DimZeroOr>(&dim)) {
            const auto fit_branch = [&](const std::vector<double>& vals, double& p_zero, Kde& kde) {
                std::vector<double> nonzero;
                std::size_t zeros = 0;
                for (const double v : vals)
                    v == 0.0 ? void(++zeros) : nonzero.push_back(v);
                p_zero = (static_cast<double>(zeros) + constants::kZeroBranchPrior) /
                         (static_cast<double>(vals.size()) + 1.0);
                double lo, hi;
                bool log_space = false;
                if (const auto* iu = std::get_if<DimUniform>(&dz->inner)) {
                    lo = iu->lo;
                    hi = iu->hi;
                } else {
                    const auto& il = std::get<DimLogUniform>(dz->inner);
                    lo = std::log(il.lo);
                    hi = std::log(il.hi);
                    log_space = true;
                }
                if (log_space)
                    for (double& v : nonzero) v = std::log(v);
                kde = Kde::fit(std::move(nonzero), lo, hi);
            };
            fit_branch(collect_num(good), good_p_zero_, good_kde_);
            fit_branch(collect_num(bad), bad_p_zero_, bad_kde_);
        } else if (const auto* dc = std::get_if<DimCategorical>(&dim)) {
            good_cat_ = CategoricalKde::fit(collect_str(good), *dc);
            bad_cat_ = CategoricalKde::fit(collect_str(bad), *dc);
        }
        // Constants carry no density.
    }

    nlohmann::json sample_good(Rng& rng) const {
        if (const auto* di = std::get_if<DimUniformInt>(dim_))
            return di->value_at(static_cast<std::int64_t>(good_int_.sample(rng)));
        if (std::get_if<DimUniform>(dim_)) return good_kde_.sample(rng);
        if (std::get_if<DimLogUniform>(dim_)) return std::exp(good_kde_.sample(rng));
        if (const auto* dz = std::get_if<DimZeroOr>(dim_)) {
            if (rng.uniform() < good_p_zero_) return 0.0;
            const double v = good_kde_.sample(rng);
            return std::get_if<DimLogUniform>(&dz->inner) ? std::exp(v) : v;
        }
        if (const auto* dc = std::get_if<DimCategorical>(dim_)) {
            const double u = rng.uniform();
            double acc = 0;
            for (std::size_t k = 0; k < good_cat_.weights.size(); ++k) {
                acc += good_cat_.weights[k];
                if (u < acc) return dc->values[k];
            }
            return dc->values.back();
        }
        return std::get<DimConstant>(*dim_).value;
    }

    /// log(good density / bad density) at the candidate value.
    double log_ratio(const nlohmann::json& v) const {
        if (const auto* di = std::get_if<DimUniformInt>(dim_)) {
            const auto slot = static_cast<std::size_t>((v.get<std::int64_t>() - di->lo) / di->step);
            return std::log(good_int_.pmf(slot)) - std::log(bad_int_.pmf(slot));
        }
        if (std::get_if<DimUniform>(dim_)) {
            const double x = v.get<double>();
            return std::log(good_kde_.pdf(x)) - std::log(bad_kde_.pdf(x));
        }
        if (std::get_if<DimLogUniform>(dim_)) {
            const double x = std::log(v.get<double>());
            return std::log(good_kde_.pdf(x)) - std::log(bad_kde_.pdf(x));
        }
        if (const auto* dz = std::get_if<DimZeroOr>(dim_)) {
            const double x = v.get<double>();
            if (x == 0.0) return std::log(good_p_zero_) - std::log(bad_p_zero_);
            const double t = std::get_if<DimLogUniform>(&dz->inner) ? std::log(x) : x;
            return std::log((1.0 - good_p_zero_) * good_kde_.pdf(t)) -
                   std::log((1.0 - bad_p_zero_) * bad_kde_.pdf(t));
        }
        if (const auto* dc = std::get_if<DimCategorical>(dim_)) {
            const auto s = v.get<std::string>();
            for (std::size_t k = 0; k < dc->values.size(); ++k)
                if (dc->values[k] == s)
                    return std::log(good_cat_.weights[k]) - std::log(bad_cat_.weights[k]);
            return 0.0;
        }
        return 0.0;
    }

private:
    const Dim* dim_;
    Kde good_kde_, bad_kde_;
    DiscreteKde good_int_, bad_int_;
    CategoricalKde good_cat_, bad_cat_;
    double good_p_zero_ = 0.5, bad_p_zero_ = 0.5;
};

}  // namespace tpe_detail

/// Propose the next configuration given the trial history. The first
/// kTpeStartupTrials trials sample uniformly; afterwards candidates come from
/// the good-set model and the best good/bad ratio wins. Failed trials count
/// as bad. Deterministic given the rng stream and history.
inline nlohmann::json sample_config(const SearchSpace& space,
                                    const std::vector<TrialRecord>& history, Rng& rng) {
    std::vector<const TrialRecord*> ok;
    std::vector<nlohmann::json> failed_configs;
    for (const auto& t : history) {
        if (t.objective)
            ok.push_back(&t);
        else
            failed_configs.push_back(t.config);
    }
    if (static_cast<int>(history.size()) < constants::kTpeStartupTrials || ok.empty())
        return space.sample_uniform(rng);

    std::sort(ok.begin(), ok.end(), [](const TrialRecord* a, const TrialRecord* b) {
        if (*a->objective != *b->objective) return *a->objective > *b->objective;
        return a->index < b->index;
    });
    const auto n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(constants::kTpeGamma * static_cast<double>(ok.size()))));

    std::vector<nlohmann::json> good, bad;
    for (std::size_t i = 0; i < ok.size(); ++i)
        (i < n_good ? good : bad).push_back(ok[i]->config);
    for (auto& c : failed_configs) bad.push_back(std::move(c));
    if (bad.empty()) bad.push_back(good.back());  // degenerate split

    std::vector<tpe_detail::DimModel> models;
    models.reserve(space.dims().size());
    for (const auto& [name, dim] : space.dims())
        models.emplace_back(name, dim, good, bad);

    nlohmann::json best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < constants::kTpeCandidates; ++c) {
        nlohmann::json candidate = nlohmann::json::object();
        double score = 0.0;
        std::size_t d = 0;
        for (const auto& [name, dim] : space.dims()) {
            candidate[name] = models[d].sample_good(rng);
            score += models[d].log_ratio(candidate.at(name));
            ++d;
        }
        if (score > best_score) {
            best_score = score;
            best = std::move(candidate);
        }
    }
    return best;
}

struct TuneResult {
    nlohmann::json best_config;
    int best_index = -1;
    double best_objective = 0.0;
    std::vector<TrialRecord> trials;
};

/// Run `budget` trials of the objective under the TPE proposal loop.
/// The objective returns the validation score (higher better) or nullopt for
/// a failed trial. Ties keep the earliest trial. on_trial fires after each
/// trial completes (serialized). workers > 1 runs objectives concurrently;
/// proposals then see only completed trials.
inline TuneResult tune(const SearchSpace& space, int budget, std::uint64_t seed,
                       const std::function<std::optional<double>(const nlohmann::json&)>& objective,
                       const std::function<void(const TrialRecord&)>& on_trial = {},
                       int workers = 1) {
    if (budget < 1) throw ConfigError("tune: budget must be >= 1");
    const Rng root = Rng(seed).split("tpe");

    TuneResult result;
    result.trials.reserve(static_cast<std::size_t>(budget));

    if (workers <= 1) {
        for (int i = 0; i < budget; ++i) {
            Rng trial_rng = root.split(static_cast<std::uint64_t>(i));
            TrialRecord rec;
            rec.index = i;
            rec.config = sample_config(space, result.trials, trial_rng);
            rec.objective = objective(rec.config);
            rec.status = rec.objective ? "ok" : "failed";
            if (on_trial) on_trial(rec);
            result.trials.push_back(std::move(rec));
        }
    } else {
        std::mutex mu;
        int next_index = 0;
        std::vector<TrialRecord> done;
        std::vector<std::thread> pool;
        std::exception_ptr first_error;
        const int n_workers = std::min(workers, budget);
        for (int w = 0; w < n_workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    TrialRecord rec;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next_index >= budget || first_error) return;
                        rec.index = next_index++;
                        Rng trial_rng = root.split(static_cast<std::uint64_t>(rec.index));
                        rec.config = sample_config(space, done, trial_rng);
                    }
                    std::optional<double> obj;
                    try {
                        obj = objective(rec.config);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(mu);
                        if (!first_error) first_error = std::current_exception();
                        return;
                    }
                    std::lock_guard<std::mutex> lock(mu);
                    rec.objective = obj;
                    rec.status = obj ? "ok" : "failed";
                    if (on_trial) on_trial(rec);
                    done.push_back(std::move(rec));
                }
            });
        }
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
        std::sort(done.begin(), done.end(),
                  [](const TrialRecord& a, const TrialRecord& b) { return a.index < b.index; });
        result.trials = std::move(done);
    }

    for (const auto& t : result.trials) {
        if (!t.objective) continue;
        if (result.best_index < 0 || *t.objective > result.best_objective) {
            result.best_index = t.index;
            result.best_objective = *t.objective;
            result.best_config = t.config;
        }
    }
    if (result.best_index < 0) throw Error("tune: all trials failed");
    return result;
}

/// Recover the winner from a persisted trial log without retraining.
inline TuneResult replay_tuning_log(const std::vector<TrialRecord>& trials) {
    TuneResult result;
    result.trials = trials;
    for (const auto& t : result.trials) {
        if (!t.objective) continue;
        if (result.best_index < 0 || *t.objective > result.best_objective) {
            result.best_index = t.index;
            result.best_objective = *t.objective;
            result.best_config = t.config;
        }
    }
    if (result.best_index < 0) throw Error("tuning log contains no successful trial");
    return result;
}

}  // namespace tabopt
