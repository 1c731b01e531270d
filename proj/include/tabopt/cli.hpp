// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabopt/data.hpp"
#include "tabopt/report.hpp"
#include "tabopt/search_space.hpp"
#include "tabopt/tpe.hpp"
#include "tabopt/trainer.hpp"

namespace tabopt::cli {

namespace fs = std::filesystem;

/// "0..9", "3", or "0,2,5" -> explicit seed list.
inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> seeds;
    const auto range_pos = s.find("..");
    if (range_pos != std::string::npos) {
        const auto lo = std::stoull(s.substr(0, range_pos));
        const auto hi = std::stoull(s.substr(range_pos + 2));
        if (hi < lo) throw ConfigError("seed range is empty: " + s);
        for (auto v = lo; v <= hi; ++v) seeds.push_back(v);
        return seeds;
    }
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto tok = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) throw ConfigError("no seeds in: " + s);
    return seeds;
}

inline int capped_workers(int requested) {
    if (const char* env = std::getenv("TABOPT_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) requested = std::min(requested, cap);
    }
    return std::max(requested, 1);
}

inline void refuse_existing(const fs::path& path, bool force) {
    if (!force && fs::exists(path))
        throw ConfigError(path.string() + " already exists; pass --force to overwrite");
}

inline nlohmann::json load_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return j;
}

inline EncodedDataset load_encoded(const std::string& dir, std::uint64_t prep_seed) {
    if (!fs::exists(fs::path(dir) / "meta.json"))
        throw ConfigError("missing dataset dir (no meta.json): " + dir);
    auto [meta, splits] = load_dataset(dir);
    return EncodedDataset(std::move(meta), splits, prep_seed);
}

// ---------------------------------------------------------------------------
// Subcommand payloads
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string kind = "two_gaussians";
    int n = 2000;
    std::uint64_t seed = 0;
    std::string out;
    double separation = 6.0;
    double noise = -1.0;
    bool force = false;
};

inline int cmd_gen_data(const GenDataArgs& a) {
    refuse_existing(fs::path(a.out) / "meta.json", a.force);
    SyntheticOptions opt;
    opt.separation = a.separation;
    opt.noise = a.noise;
    auto [meta, splits] = make_synthetic(parse_synthetic_kind(a.kind), a.n, a.seed, opt);
    save_dataset(a.out, meta, splits);
    std::cout << "wrote " << a.out << " (" << meta.name << ", n=" << a.n << ")\n";
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string model = "mlp";
    std::string optimizer = "adamw";
    bool ema = false;
    double ema_decay = 0.99;
    std::string config_file;
    std::string seeds = "0..9";
    std::string out;
    int workers = 1;
    int max_epochs = constants::kMaxEpochs;
    int patience = constants::kPatience;
    int batch_size = 0;
    std::uint64_t prep_seed = 0;
    bool force = false;
};

inline int cmd_train(const TrainArgs& a) {
    const fs::path out_dir(a.out);
    const fs::path runs_path = out_dir / "runs.jsonl";
    refuse_existing(runs_path, a.force);

    ModelSpec model_spec;
    model_spec.kind = parse_model_kind(a.model);
    OptimizerSpec opt_spec = OptimizerSpec::defaults(parse_opt_rule(a.optimizer));
    if (a.ema) opt_spec.ema_decay = a.ema_decay;
    if (!a.config_file.empty()) {
        // Config file wins over flags.
        const auto j = load_json_file(a.config_file);
        if (j.contains("model")) model_spec = ModelSpec::from_json(j.at("model"));
        if (j.contains("optimizer")) opt_spec = OptimizerSpec::from_json(j.at("optimizer"));
    }

    const EncodedDataset data = load_encoded(a.data, a.prep_seed);
    TrainConfig cfg;
    cfg.max_epochs = a.max_epochs;
    cfg.patience = a.patience;
    cfg.batch_size = a.batch_size;

    const auto seeds = parse_seeds(a.seeds);
    const auto results =
        run_protocol<double>(data, model_spec, opt_spec, cfg, seeds, capped_workers(a.workers));

    fs::create_directories(out_dir);
    write_runs_jsonl(runs_path.string(), results);
    write_timings_jsonl((out_dir / "timings.jsonl").string(), results, "train");
    int failed = 0;
    for (const auto& r : results) failed += r.failed ? 1 : 0;
    std::cout << "wrote " << runs_path.string() << " (" << results.size() << " runs, " << failed
              << " failed)\n";
    return 0;
}

struct TuneArgs {
    std::string data;
    std::string model = "mlp";
    std::string optimizer = "adamw";
    bool ema = false;
    int budget = 0;  // 0 = table default
    std::uint64_t seed = 0;
    std::string out;
    std::string space_file;
    bool large_dataset = false;
    int workers = 1;
    int max_epochs = constants::kMaxEpochs;
    int patience = constants::kPatience;
    int batch_size = 0;
    std::uint64_t prep_seed = 0;
    bool force = false;
};

inline int cmd_tune(const TuneArgs& a) {
    const fs::path out_dir(a.out);
    refuse_existing(out_dir / "best_config.json", a.force);

    const ModelKind model = parse_model_kind(a.model);
    const OptRule rule = parse_opt_rule(a.optimizer);
    SpaceWithBudget swb = space_for(model, rule, a.ema, a.large_dataset);
    if (!a.space_file.empty()) swb.space = SearchSpace::from_json(load_json_file(a.space_file));
    const int budget = a.budget > 0 ? a.budget : swb.budget;

    const EncodedDataset data = load_encoded(a.data, a.prep_seed);
    TrainConfig cfg;
    cfg.max_epochs = a.max_epochs;
    cfg.patience = a.patience;
    cfg.batch_size = a.batch_size;
    cfg.seed = a.seed;  // one fixed training seed per trial

    std::mutex timing_mutex;
    std::vector<RunResult> trial_runs;
    const auto objective = [&](const nlohmann::json& config) -> std::optional<double> {
        auto [model_spec, opt_spec] = config_to_specs(model, rule, a.ema, config);
        const RunResult r = train_one<double>(data, model_spec, opt_spec, cfg);
        {
            std::lock_guard<std::mutex> lock(timing_mutex);
            trial_runs.push_back(r);
        }
        if (r.failed) return std::nullopt;
        return oriented_score(data.meta().metric, r.best_val_score);
    };

    const TuneResult result =
        tune(swb.space, budget, a.seed, objective, {}, capped_workers(a.workers));

    fs::create_directories(out_dir);
    {
        std::ofstream os(out_dir / "tuning.jsonl", std::ios::binary);
        for (const auto& t : result.trials) os << t.to_json().dump() << '\n';
    }
    {
        std::ofstream os(out_dir / "space.json", std::ios::binary);
        nlohmann::json sj = swb.space.to_json();
        sj["budget"] = budget;
        os << sj.dump(2) << '\n';
    }
    auto [best_model, best_opt] = config_to_specs(model, rule, a.ema, result.best_config);
    {
        std::ofstream os(out_dir / "best_config.json", std::ios::binary);
        const nlohmann::json bj{{"model", best_model.to_json()},
                                {"optimizer", best_opt.to_json()},
                                {"config", result.best_config},
                                {"objective", result.best_objective},
                                {"trial_index", result.best_index},
                                {"dataset", data.meta().name}};
        os << bj.dump(2) << '\n';
    }
    write_timings_jsonl((out_dir / "timings.jsonl").string(), trial_runs, "tune");
    std::cout << "best trial " << result.best_index << " objective " << result.best_objective
              << "; wrote " << (out_dir / "best_config.json").string() << "\n";
    return 0;
}

struct AggregateArgs {
    std::string runs_dir;
    std::string baseline = "mlp:adamw";
    std::string out;
    bool force = false;
};

inline int cmd_aggregate(const AggregateArgs& a) {
    const fs::path out_dir = a.out.empty() ? fs::path(a.runs_dir) : fs::path(a.out);
    refuse_existing(out_dir / "report.md", a.force);

    std::vector<RunResult> runs;
    std::vector<nlohmann::json> timings;
    if (!fs::exists(a.runs_dir)) throw ConfigError("missing runs dir: " + a.runs_dir);
    for (const auto& entry : fs::recursive_directory_iterator(a.runs_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (name == "runs.jsonl")
            for (const auto& j : read_jsonl(entry.path().string()))
                runs.push_back(RunResult::from_json(j));
        else if (name == "timings.jsonl")
            for (auto& j : read_jsonl(entry.path().string())) timings.push_back(std::move(j));
    }
    if (runs.empty()) throw ConfigError("no runs.jsonl records found under " + a.runs_dir);

    AggregateOptions opt;
    opt.baseline = a.baseline;
    const AggregateReport report = aggregate_runs(runs, timings, opt);
    fs::create_directories(out_dir);
    {
        std::ofstream os(out_dir / "aggregate.json", std::ios::binary);
        os << report.to_json().dump(2) << '\n';
    }
    emit_report(report, out_dir);
    std::cout << "wrote " << (out_dir / "report.md").string() << " (" << report.methods.size()
              << " methods, " << report.datasets.size() << " datasets)\n";
    return 0;
}

struct ReportArgs {
    std::string aggregate_file;
    std::string out;
    bool force = false;
};

inline int cmd_report(const ReportArgs& a) {
    const AggregateReport report = AggregateReport::from_json(load_json_file(a.aggregate_file));
    refuse_existing(fs::path(a.out) / "report.md", a.force);
    emit_report(report, a.out);
    std::cout << "wrote " << (fs::path(a.out) / "report.md").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// selftest: quick oracle checks runnable from the installed binary
// ---------------------------------------------------------------------------

inline int cmd_selftest() {
    int failures = 0;
    const auto check = [&](const char* name, bool ok) {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    };

    // Analytic MLP gradients against a local finite-difference loop.
    {
        MLPConfig cfg{2, 12, 0.0, 5, 3};
        auto params = build_mlp<double>(cfg, Rng(21));
        Rng xr(22);
        auto x = Tensor::zeros({4, 5});
        for (auto& v : x.values()) v = xr.normal();
        const std::vector<int> labels{0, 2, 1, 0};

        Rng drop(0);
        MlpCache<double> cache;
        const Tensor logits = mlp_forward(params, cfg, x, true, drop, &cache);
        Tensor dlogits;
        cross_entropy_with_grad(logits, labels, dlogits);
        auto analytic = params.make_grads();
        mlp_backward(params, cfg, cache, dlogits, analytic);

        double worst = 0.0;
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& tensor = params.entry_at(pi).value;
            const auto& ga = analytic.at(params.name_at(pi));
            for (std::size_t idx = 0; idx < tensor.size(); ++idx) {
                const double saved = tensor[idx];
                const double h = 1e-5;
                Rng d1(0), d2(0);
                tensor[idx] = saved + h;
                const double up = cross_entropy(mlp_forward(params, cfg, x, true, d1), labels);
                tensor[idx] = saved - h;
                const double down = cross_entropy(mlp_forward(params, cfg, x, true, d2), labels);
                tensor[idx] = saved;
                const double num = (up - down) / (2.0 * h);
                const double denom = std::max({std::abs(num), std::abs(ga[idx]), 1e-6});
                worst = std::max(worst, std::abs(num - ga[idx]) / denom);
            }
        }
        check("gradient check (max rel err < 1e-4)", worst < 1e-4);
    }

    // Newton-Schulz produces near-orthonormal columns and keeps scale out.
    {
        Rng rng(31);
        bool ok = true;
        for (int trial = 0; trial < 5; ++trial) {
            auto m = Tensor::zeros({24, 12});
            for (auto& v : m.values()) v = rng.normal();
            const Tensor q = newton_schulz_orthogonalize(m);
            const Tensor gram = matmul_tn(q, q);
            double err = 0;
            for (int i = 0; i < gram.rows(); ++i)
                for (int j = 0; j < gram.cols(); ++j)
                    err += std::pow(gram(i, j) - (i == j ? 1.0 : 0.0), 2);
            if (std::sqrt(err) >= 0.3) ok = false;
            const Tensor q_scaled = newton_schulz_orthogonalize(scaled(m, 10.0));
            for (std::size_t i = 0; i < q.size(); ++i)
                if (std::abs(q[i] - q_scaled[i]) > 1e-6) ok = false;
        }
        check("newton-schulz orthogonality and scale invariance", ok);
    }

    // Student-t CDF against closed forms: Cauchy (nu=1) and nu=2.
    {
        const double cauchy = student_t_cdf(1.0, 1.0);  // 0.5 + atan(1)/pi = 0.75
        const double nu2 = student_t_cdf(1.0, 2.0);     // 0.5 + 1/(2 sqrt(3))
        const bool ok = std::abs(cauchy - 0.75) < 1e-12 &&
                        std::abs(nu2 - (0.5 + 1.0 / (2.0 * std::sqrt(3.0)))) < 1e-12;
        check("t distribution closed-form values", ok);
    }

    // Welch decisions on known inputs.
    {
        const std::vector<double> a{2.1, 2.0, 1.9, 2.2, 2.0, 2.1, 1.8, 2.0, 2.1, 1.9};
        const std::vector<double> b{1.8, 1.9, 1.7, 1.8, 2.0, 1.9, 1.8, 1.7, 1.9, 1.8};
        const bool ok = welch_wtl(a, a) == Wtl::tie && welch_wtl(a, b) == Wtl::win &&
                        welch_wtl(b, a) == Wtl::loss;
        check("welch win/tie/loss decisions", ok);
    }

    std::cout << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
    return failures == 0 ? 0 : 2;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"tabular deep-learning optimizer benchmark"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    gen_cmd->add_option("--kind", gen.kind, "two_gaussians | linear_regression | friedman");
    gen_cmd->add_option("--n", gen.n, "total rows")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--out", gen.out, "output dataset directory")->required();
    gen_cmd->add_option("--sep", gen.separation, "two_gaussians class-mean separation");
    gen_cmd->add_option("--noise", gen.noise, "regression noise sigma (kind default if unset)");
    gen_cmd->add_flag("--force", gen.force, "overwrite existing outputs");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train and evaluate over seeds");
    train_cmd->add_option("--data", tr.data, "dataset directory")->required();
    train_cmd->add_option("--model", tr.model, "mlp | mlp_ple | tabm_packed");
    train_cmd->add_option("--optimizer", tr.optimizer, "update rule name");
    train_cmd->add_flag("--ema", tr.ema, "track an EMA of the weights and evaluate it");
    train_cmd->add_option("--ema-decay", tr.ema_decay, "EMA decay when --ema is set");
    train_cmd->add_option("--config", tr.config_file, "config JSON (overrides model/optimizer flags)");
    train_cmd->add_option("--seeds", tr.seeds, "seed list: 0..9 or 0,1,2");
    train_cmd->add_option("--out", tr.out, "output directory")->required();
    train_cmd->add_option("--workers", tr.workers, "parallel runs");
    train_cmd->add_option("--max-epochs", tr.max_epochs, "safety cap");
    train_cmd->add_option("--patience", tr.patience, "early-stopping patience");
    train_cmd->add_option("--batch-size", tr.batch_size, "override dataset batch size");
    train_cmd->add_option("--prep-seed", tr.prep_seed, "preprocessing jitter seed");
    train_cmd->add_flag("--force", tr.force, "overwrite existing outputs");

    TuneArgs tu;
    auto* tune_cmd = app.add_subcommand("tune", "hyperparameter search");
    tune_cmd->add_option("--data", tu.data, "dataset directory")->required();
    tune_cmd->add_option("--model", tu.model, "mlp | mlp_ple | tabm_packed");
    tune_cmd->add_option("--optimizer", tu.optimizer, "update rule name");
    tune_cmd->add_flag("--ema", tu.ema, "tune with EMA enabled (adds ema_decay to the space)");
    tune_cmd->add_option("--budget", tu.budget, "trial budget (0 = table default)");
    tune_cmd->add_option("--seed", tu.seed, "sampler seed and per-trial training seed");
    tune_cmd->add_option("--out", tu.out, "output directory")->required();
    tune_cmd->add_option("--space", tu.space_file, "override search space from JSON");
    tune_cmd->add_flag("--large-dataset", tu.large_dataset, "use the reduced ensemble budget");
    tune_cmd->add_option("--workers", tu.workers, "parallel trials");
    tune_cmd->add_option("--max-epochs", tu.max_epochs, "safety cap");
    tune_cmd->add_option("--patience", tu.patience, "early-stopping patience");
    tune_cmd->add_option("--batch-size", tu.batch_size, "override dataset batch size");
    tune_cmd->add_option("--prep-seed", tu.prep_seed, "preprocessing jitter seed");
    tune_cmd->add_flag("--force", tu.force, "overwrite existing outputs");

    AggregateArgs ag;
    auto* agg_cmd = app.add_subcommand("aggregate", "aggregate run records into a report");
    agg_cmd->add_option("--runs", ag.runs_dir, "directory scanned for runs.jsonl files")->required();
    agg_cmd->add_option("--baseline", ag.baseline, "baseline method key (model:optimizer)");
    agg_cmd->add_option("--out", ag.out, "output directory (default: runs dir)");
    agg_cmd->add_flag("--force", ag.force, "overwrite existing outputs");

    ReportArgs rp;
    auto* rep_cmd = app.add_subcommand("report", "re-render report files from aggregate.json");
    rep_cmd->add_option("--aggregate", rp.aggregate_file, "aggregate.json path")->required();
    rep_cmd->add_option("--out", rp.out, "output directory")->required();
    rep_cmd->add_flag("--force", rp.force, "overwrite existing outputs");

    auto* self_cmd = app.add_subcommand("selftest", "run built-in oracle checks");

    std::vector<const char*> argv;
    argv.push_back("tabopt");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(tr);
        if (*tune_cmd) return cmd_tune(tu);
        if (*agg_cmd) return cmd_aggregate(ag);
        if (*rep_cmd) return cmd_report(rp);
        if (*self_cmd) return cmd_selftest();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace tabopt::cli
