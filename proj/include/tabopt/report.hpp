// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabopt/stats.hpp"
#include "tabopt/trainer.hpp"

namespace tabopt {

struct AggregateOptions {
    std::string baseline = "mlp:adamw";
    double alpha = constants::kWelchAlpha;
};

struct PerDataset {
    double mean_unified = 0.0;
    double std_unified = 0.0;
    double mean_native = 0.0;
    std::optional<double> delta;   // absent when the baseline score is nonpositive
    std::optional<int> rank;
    std::optional<Wtl> wtl;        // vs baseline, absent for the baseline itself
    int n_seeds = 0;
};

struct MethodAggregate {
    std::string method;
    double delta_score = 0.0;  // mean over comparable datasets
    double mean_rank = 0.0;
    int wins = 0, ties = 0, losses = 0;
    int n_datasets = 0;  // datasets compared against the baseline
    std::optional<double> time_overhead;
    std::map<std::string, PerDataset> per_dataset;
};

struct AggregateReport {
    std::string baseline;
    double alpha = constants::kWelchAlpha;
    std::vector<std::string> datasets;
    std::vector<MethodAggregate> methods;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    static AggregateReport from_json(const nlohmann::json& j);
};

namespace detail {

struct SeedSet {
    MetricKind metric = MetricKind::accuracy;
    double label_std = 0.0;
    std::vector<double> native;  // completed seed-level test scores
    bool any_failed = false;
    bool complete = false;       // no failed runs and >= 2 seeds

    std::vector<double> unified() const {
        std::vector<double> out;
        out.reserve(native.size());
        for (const double v : native) out.push_back(to_unified_score(metric, v, label_std));
        return out;
    }
    std::vector<double> oriented() const {
        std::vector<double> out;
        out.reserve(native.size());
        for (const double v : native) out.push_back(oriented_score(metric, v));
        return out;
    }
};

inline std::string method_key(const RunResult& r) { return r.model + ":" + r.optimizer; }

}  // namespace detail

/// Fold run records (plus optional tuning-time records) into the three
/// benchmark aggregates: delta score, tier mean rank, and Welch win/tie/loss
/// against the baseline, with tuning-time overhead when timings are present.
inline AggregateReport aggregate_runs(const std::vector<RunResult>& runs,
                                      const std::vector<nlohmann::json>& timings,
                                      const AggregateOptions& opt = {}) {
    AggregateReport report;
    report.baseline = opt.baseline;
    report.alpha = opt.alpha;

    std::map<std::string, std::map<std::string, detail::SeedSet>> by_method;  // method -> dataset
    std::set<std::string> datasets;
    for (const auto& r : runs) {
        auto& cell = by_method[detail::method_key(r)][r.dataset];
        cell.metric = parse_metric(r.metric);
        cell.label_std = r.test_label_std;
        datasets.insert(r.dataset);
        if (r.failed)
            cell.any_failed = true;
        else
            cell.native.push_back(r.test_score_at_best);
    }
    for (auto& [method, cells] : by_method)
        for (auto& [ds, cell] : cells) {
            cell.complete = !cell.any_failed && cell.native.size() >= 2;
            if (!cell.complete)
                report.warnings.push_back("incomplete seed set for " + method + " on " + ds +
                                          "; excluded from comparisons");
        }
    report.datasets.assign(datasets.begin(), datasets.end());

    if (!by_method.count(opt.baseline))
        throw ConfigError("baseline method '" + opt.baseline + "' not present in results");
    const auto& baseline_cells = by_method.at(opt.baseline);

    // Tuning wall time per (method, dataset).
    std::map<std::string, std::map<std::string, double>> tune_time;
    for (const auto& t : timings) {
        if (t.value("phase", "") != "tune") continue;
        const std::string method =
            t.at("model").get<std::string>() + ":" + t.at("optimizer").get<std::string>();
        tune_time[method][t.at("dataset").get<std::string>()] +=
            t.at("wall_time_seconds").get<double>();
    }

    // Tier ranks per dataset over every complete method.
    std::map<std::string, std::map<std::string, int>> ranks;  // dataset -> method -> rank
    for (const auto& ds : report.datasets) {
        std::vector<std::string> present;
        std::vector<std::pair<double, double>> mu_sigma;
        for (const auto& [method, cells] : by_method) {
            const auto it = cells.find(ds);
            if (it == cells.end() || !it->second.complete) continue;
            const auto u = it->second.unified();
            const double mu = sample_mean(u);
            const double sigma = u.size() > 1 ? std::sqrt(sample_var(u)) : 0.0;
            present.push_back(method);
            mu_sigma.emplace_back(mu, sigma);
        }
        if (present.empty()) continue;
        const std::vector<int> r = tier_ranks(mu_sigma);
        for (std::size_t i = 0; i < present.size(); ++i) ranks[ds][present[i]] = r[i];
    }

    for (const auto& [method, cells] : by_method) {
        MethodAggregate agg;
        agg.method = method;
        std::vector<double> deltas;
        std::vector<double> rank_values;
        std::vector<double> method_times, baseline_times;

        for (const auto& ds : report.datasets) {
            const auto it = cells.find(ds);
            if (it == cells.end()) continue;
            const auto& cell = it->second;
            PerDataset pd;
            pd.n_seeds = static_cast<int>(cell.native.size());
            if (cell.complete) {
                const auto u = cell.unified();
                pd.mean_unified = sample_mean(u);
                pd.std_unified = u.size() > 1 ? std::sqrt(sample_var(u)) : 0.0;
                pd.mean_native = sample_mean(cell.native);
                const auto rit = ranks.find(ds);
                if (rit != ranks.end() && rit->second.count(method)) {
                    pd.rank = rit->second.at(method);
                    rank_values.push_back(static_cast<double>(*pd.rank));
                }

                const auto bit = baseline_cells.find(ds);
                const bool comparable = bit != baseline_cells.end() && bit->second.complete &&
                                        bit->second.native.size() == cell.native.size();
                if (comparable) {
                    const double base_mean = sample_mean(bit->second.unified());
                    if (base_mean > 0.0) {
                        pd.delta = delta_score_percent(pd.mean_unified, base_mean);
                        deltas.push_back(*pd.delta);
                    } else {
                        report.warnings.push_back("nonpositive baseline unified score on " + ds +
                                                  "; dataset excluded from delta_score");
                    }
                    if (method != opt.baseline) {
                        pd.wtl = welch_wtl(cell.oriented(), bit->second.oriented(), opt.alpha);
                        switch (*pd.wtl) {
                            case Wtl::win: ++agg.wins; break;
                            case Wtl::tie: ++agg.ties; break;
                            case Wtl::loss: ++agg.losses; break;
                        }
                    }
                    ++agg.n_datasets;

                    const auto mt = tune_time.find(method);
                    const auto bt = tune_time.find(opt.baseline);
                    if (mt != tune_time.end() && bt != tune_time.end() &&
                        mt->second.count(ds) && bt->second.count(ds)) {
                        method_times.push_back(mt->second.at(ds));
                        baseline_times.push_back(bt->second.at(ds));
                    }
                }
            }
            agg.per_dataset[ds] = pd;
        }

        agg.delta_score = deltas.empty() ? 0.0 : sample_mean(deltas);
        agg.mean_rank = rank_values.empty() ? 0.0 : sample_mean(rank_values);
        if (!method_times.empty()) agg.time_overhead = time_overhead(method_times, baseline_times);
        report.methods.push_back(std::move(agg));
    }

    // Baseline first, then by decreasing delta score.
    std::stable_sort(report.methods.begin(), report.methods.end(),
                     [&](const MethodAggregate& a, const MethodAggregate& b) {
                         if (a.method == opt.baseline) return true;
                         if (b.method == opt.baseline) return false;
                         return a.delta_score > b.delta_score;
                     });
    return report;
}

inline nlohmann::json AggregateReport::to_json() const {
    nlohmann::json methods_json = nlohmann::json::array();
    for (const auto& m : methods) {
        nlohmann::json per_ds = nlohmann::json::object();
        for (const auto& [ds, pd] : m.per_dataset) {
            nlohmann::json p{{"mean_unified", pd.mean_unified},
                             {"std_unified", pd.std_unified},
                             {"mean_native", pd.mean_native},
                             {"n_seeds", pd.n_seeds}};
            if (pd.delta) p["delta"] = *pd.delta;
            if (pd.rank) p["rank"] = *pd.rank;
            if (pd.wtl) p["wtl"] = to_string(*pd.wtl);
            per_ds[ds] = std::move(p);
        }
        nlohmann::json mj{{"method", m.method},
                          {"delta_score", m.delta_score},
                          {"mean_rank", m.mean_rank},
                          {"wins", m.wins},
                          {"ties", m.ties},
                          {"losses", m.losses},
                          {"n_datasets", m.n_datasets},
                          {"per_dataset", per_ds}};
        if (m.time_overhead) mj["time_overhead"] = *m.time_overhead;
        methods_json.push_back(std::move(mj));
    }
    return {{"schema_version", 1}, {"baseline", baseline},       {"alpha", alpha},
            {"datasets", datasets}, {"methods", methods_json}, {"warnings", warnings}};
}

inline AggregateReport AggregateReport::from_json(const nlohmann::json& j) {
    AggregateReport r;
    r.baseline = j.at("baseline").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.datasets = j.at("datasets").get<std::vector<std::string>>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
    for (const auto& mj : j.at("methods")) {
        MethodAggregate m;
        m.method = mj.at("method").get<std::string>();
        m.delta_score = mj.at("delta_score").get<double>();
        m.mean_rank = mj.at("mean_rank").get<double>();
        m.wins = mj.at("wins").get<int>();
        m.ties = mj.at("ties").get<int>();
        m.losses = mj.at("losses").get<int>();
        m.n_datasets = mj.at("n_datasets").get<int>();
        if (mj.contains("time_overhead")) m.time_overhead = mj.at("time_overhead").get<double>();
        for (const auto& [ds, p] : mj.at("per_dataset").items()) {
            PerDataset pd;
            pd.mean_unified = p.at("mean_unified").get<double>();
            pd.std_unified = p.at("std_unified").get<double>();
            pd.mean_native = p.at("mean_native").get<double>();
            pd.n_seeds = p.at("n_seeds").get<int>();
            if (p.contains("delta")) pd.delta = p.at("delta").get<double>();
            if (p.contains("rank")) pd.rank = p.at("rank").get<int>();
            if (p.contains("wtl")) {
                const auto s = p.at("wtl").get<std::string>();
                pd.wtl = s == "win" ? Wtl::win : s == "loss" ? Wtl::loss : Wtl::tie;
            }
            m.per_dataset[ds] = pd;
        }
        r.methods.push_back(std::move(m));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v, int decimals) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(decimals) << v;
    return ss.str();
}

}  // namespace detail

/// Write report.md, report.csv, and plotdata.json into the output directory.
inline void emit_report(const AggregateReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    {
        std::ofstream md(dir / "report.md", std::ios::binary);
        if (!md) throw IoError("cannot write report.md");
        md << "# Benchmark report\n\n";
        md << "Baseline: `" << report.baseline << "`, Welch alpha " << report.alpha << ", "
           << report.datasets.size() << " dataset(s).\n\n";
        md << "| Method | Delta score (%) | Mean rank | W/T/L | Time overhead | Datasets |\n";
        md << "|---|---|---|---|---|---|\n";
        for (const auto& m : report.methods) {
            md << "| " << m.method << " | " << detail::fmt(m.delta_score, 2) << " | "
               << detail::fmt(m.mean_rank, 2) << " | ";
            if (m.method == report.baseline)
                md << "-";
            else
                md << m.wins << "/" << m.ties << "/" << m.losses;
            md << " | ";
            if (m.time_overhead)
                md << detail::fmt(*m.time_overhead, 2) << "x";
            else
                md << "-";
            md << " | " << m.n_datasets << " |\n";
        }
        if (!report.warnings.empty()) {
            md << "\n## Warnings\n\n";
            for (const auto& w : report.warnings) md << "- " << w << "\n";
        }
    }

    {
        std::ofstream csv(dir / "report.csv", std::ios::binary);
        if (!csv) throw IoError("cannot write report.csv");
        csv << "method,dataset,n_seeds,mean_native,mean_unified,std_unified,delta,rank,wtl\n";
        for (const auto& m : report.methods) {
            for (const auto& [ds, pd] : m.per_dataset) {
                csv << m.method << ',' << ds << ',' << pd.n_seeds << ','
                    << detail::fmt(pd.mean_native, 6) << ',' << detail::fmt(pd.mean_unified, 6)
                    << ',' << detail::fmt(pd.std_unified, 6) << ',';
                if (pd.delta) csv << detail::fmt(*pd.delta, 4);
                csv << ',';
                if (pd.rank) csv << *pd.rank;
                csv << ',';
                if (pd.wtl) csv << to_string(*pd.wtl);
                csv << '\n';
            }
        }
    }

    {
        // Box percentiles over per-dataset delta values, plus raw ranks.
        nlohmann::json rank_dist = nlohmann::json::object();
        nlohmann::json delta_box = nlohmann::json::object();
        for (const auto& m : report.methods) {
            std::vector<double> ds_ranks, ds_deltas;
            for (const auto& [ds, pd] : m.per_dataset) {
                if (pd.rank) ds_ranks.push_back(static_cast<double>(*pd.rank));
                if (pd.delta) ds_deltas.push_back(*pd.delta);
            }
            rank_dist[m.method] = ds_ranks;
            if (!ds_deltas.empty()) {
                delta_box[m.method] = {{"p10", percentile(ds_deltas, 10)},
                                       {"p25", percentile(ds_deltas, 25)},
                                       {"p50", percentile(ds_deltas, 50)},
                                       {"p75", percentile(ds_deltas, 75)},
                                       {"p90", percentile(ds_deltas, 90)}};
            }
        }
        const nlohmann::json plot{{"schema_version", 1},
                                  {"datasets", report.datasets},
                                  {"rank_distribution", rank_dist},
                                  {"delta_box_percentiles", delta_box}};
        std::ofstream pj(dir / "plotdata.json", std::ios::binary);
        if (!pj) throw IoError("cannot write plotdata.json");
        pj << plot.dump(2) << '\n';
    }
}

}  // namespace tabopt
