// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tabopt/constants.hpp"
#include "tabopt/data.hpp"
#include "tabopt/ema.hpp"
#include "tabopt/metrics.hpp"
#include "tabopt/models.hpp"
#include "tabopt/optim.hpp"

namespace tabopt {

struct TrainConfig {
    int patience = constants::kPatience;
    double clip_threshold = constants::kClipThreshold;
    int max_epochs = constants::kMaxEpochs;
    int batch_size = 0;  // 0 = dataset default; larger than n_train clamps down
    std::uint64_t seed = 0;

    void validate() const {
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (clip_threshold <= 0.0) throw ConfigError("clip threshold must be positive");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"patience", patience},
                {"clip_threshold", clip_threshold},
                {"max_epochs", max_epochs},
                {"batch_size", batch_size},
                {"seed", seed}};
    }
};

/// Patience-based early stopping on a higher-is-better score. Improvement
/// means strictly greater than the best seen so far.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {
        if (patience < 1) throw ConfigError("patience must be >= 1");
    }

    bool observe(int epoch, double score) {
        if (score > best_) {
            best_ = score;
            best_epoch_ = epoch;
            bad_streak_ = 0;
            return true;
        }
        ++bad_streak_;
        return false;
    }

    bool should_stop() const { return bad_streak_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int bad_streak_ = 0;
};

/// Outcome of one (dataset, model, optimizer, seed) training run.
struct RunResult {
    std::string dataset;
    std::string model;
    std::string optimizer;
    std::uint64_t seed = 0;
    std::string metric;
    double best_val_score = 0.0;     // metric-native (RMSE positive)
    double test_score_at_best = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
    double wall_time_seconds = 0.0;
    double test_label_std = 0.0;
    bool failed = false;
    std::string fail_reason;
    nlohmann::json model_config;
    nlohmann::json optimizer_config;
    nlohmann::json train_config;

    /// The runs.jsonl record. Wall time deliberately lives in a separate
    /// timing file so result files are bit-reproducible across executions.
    nlohmann::json to_json() const {
        return {{"schema_version", 1},
                {"dataset", dataset},
                {"model", model},
                {"optimizer", optimizer},
                {"seed", seed},
                {"metric", metric},
                {"best_val_score", best_val_score},
                {"test_score_at_best", test_score_at_best},
                {"best_epoch", best_epoch},
                {"epochs_run", epochs_run},
                {"test_label_std", test_label_std},
                {"failed", failed},
                {"fail_reason", fail_reason},
                {"model_config", model_config},
                {"optimizer_config", optimizer_config},
                {"train_config", train_config},
                {"constants", constants::as_json()}};
    }

    static RunResult from_json(const nlohmann::json& j) {
        RunResult r;
        r.dataset = j.at("dataset").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.optimizer = j.at("optimizer").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.metric = j.at("metric").get<std::string>();
        r.best_val_score = j.at("best_val_score").get<double>();
        r.test_score_at_best = j.at("test_score_at_best").get<double>();
        r.best_epoch = j.at("best_epoch").get<int>();
        r.epochs_run = j.at("epochs_run").get<int>();
        r.test_label_std = j.at("test_label_std").get<double>();
        r.failed = j.at("failed").get<bool>();
        r.fail_reason = j.at("fail_reason").get<std::string>();
        if (j.contains("model_config")) r.model_config = j.at("model_config");
        if (j.contains("optimizer_config")) r.optimizer_config = j.at("optimizer_config");
        if (j.contains("train_config")) r.train_config = j.at("train_config");
        return r;
    }
};

namespace detail {

template <std::floating_point Real>
double evaluate_split(const ModelT<Real>& model, const ParamSetT<Real>& weights,
                      const EncodedSplit& split, MetricKind metric,
                      const LabelNormalizer& label_norm) {
    const TensorT<Real> pred = model.predict_with(split, weights);
    switch (metric) {
        case MetricKind::accuracy: {
            Matrix probs = Matrix::zeros({pred.rows(), pred.cols()});
            for (int i = 0; i < pred.rows(); ++i)
                for (int j = 0; j < pred.cols(); ++j) probs(i, j) = static_cast<double>(pred(i, j));
            return accuracy(probs, split.y_class);
        }
        case MetricKind::roc_auc: {
            std::vector<double> scores(static_cast<std::size_t>(pred.rows()));
            for (int i = 0; i < pred.rows(); ++i)
                scores[static_cast<std::size_t>(i)] = static_cast<double>(pred(i, 1));
            return roc_auc(scores, split.y_class);
        }
        case MetricKind::rmse: {
            std::vector<double> denorm(static_cast<std::size_t>(pred.rows()));
            for (int i = 0; i < pred.rows(); ++i)
                denorm[static_cast<std::size_t>(i)] =
                    label_norm.denormalize(static_cast<double>(pred(i, 0)));
            return rmse(denorm, split.y_raw);
        }
    }
    throw ConfigError("unknown metric");
}

}  // namespace detail

/// Train one model with one optimizer on one seed, following the fixed
/// protocol: seeded minibatch shuffling, global gradient clipping, epoch-level
/// validation with patience-based early stopping, one test evaluation at the
/// best checkpoint. A NaN loss marks the run failed instead of throwing.
template <std::floating_point Real = double>
RunResult train_one(const EncodedDataset& data, const ModelSpec& model_spec,
                    const OptimizerSpec& opt_spec, const TrainConfig& cfg) {
    cfg.validate();
    opt_spec.validate();

    RunResult result;
    result.dataset = data.meta().name;
    result.model = to_string(model_spec.kind);
    result.optimizer = opt_spec.method_name();
    result.seed = cfg.seed;
    result.metric = to_string(data.meta().metric);
    result.test_label_std = data.test_label_std();
    result.model_config = model_spec.to_json();
    result.optimizer_config = opt_spec.to_json();
    result.train_config = cfg.to_json();

    const MetricKind metric = data.meta().metric;
    const int n_train = data.train().rows;
    if (n_train < 1) throw ConfigError("empty train split");
    int batch = cfg.batch_size > 0 ? cfg.batch_size : data.meta().batch_size;
    batch = std::min(batch, n_train);

    ModelT<Real> model = build_model<Real>(model_spec, data, cfg.seed);
    OptimizerT<Real> optimizer(opt_spec);
    std::unique_ptr<EmaTrackerT<Real>> ema;
    if (opt_spec.ema_decay) ema = std::make_unique<EmaTrackerT<Real>>(*opt_spec.ema_decay, model.params());

    const Rng run_rng(cfg.seed);
    EarlyStopper stopper(cfg.patience);
    ParamSetT<Real> best_weights = model.params();
    double best_val_native = 0.0;
    bool have_best = false;

    const auto t_start = std::chrono::steady_clock::now();
    int epoch = 0;
    try {
        std::vector<int> order(static_cast<std::size_t>(n_train));
        std::iota(order.begin(), order.end(), 0);
        GradSetT<Real> grads = model.params().make_grads();

        for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            Rng shuffle_rng = run_rng.split("shuffle").split(static_cast<std::uint64_t>(epoch));
            for (int i = n_train - 1; i > 0; --i) {
                const auto j = static_cast<int>(shuffle_rng.uniform_int(0, i));
                std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
            }
            Rng dropout_rng = run_rng.split("dropout").split(static_cast<std::uint64_t>(epoch));

            for (int start = 0; start < n_train; start += batch) {
                const int end = std::min(start + batch, n_train);  // last partial batch kept
                const std::vector<int> rows(order.begin() + start, order.begin() + end);
                for (auto& [name, g] : grads) g.fill(Real(0));
                const Real loss = model.train_batch(data.train(), rows, dropout_rng, grads);
                if (!std::isfinite(static_cast<double>(loss)))
                    throw NumericError("non-finite training loss");
                global_grad_clip(grads, static_cast<Real>(cfg.clip_threshold));
                optimizer.step(model.params(), grads);
                if (ema) ema->update(model.params());
            }

            const ParamSetT<Real> eval_weights =
                ema ? ema->eval_params(model.params()) : optimizer.eval_params(model.params());
            const double val_native =
                detail::evaluate_split(model, eval_weights, data.val(), metric,
                                       data.preprocessor().label_normalizer());
            if (stopper.observe(epoch, oriented_score(metric, val_native))) {
                best_weights = eval_weights;
                best_val_native = val_native;
                have_best = true;
            }
            if (stopper.should_stop()) break;
        }
        result.epochs_run = std::min(epoch, cfg.max_epochs);
        result.best_epoch = stopper.best_epoch();
        result.best_val_score = best_val_native;
        if (!have_best) throw NumericError("no epoch produced a finite validation score");
        result.test_score_at_best =
            detail::evaluate_split(model, best_weights, data.test(), metric,
                                   data.preprocessor().label_normalizer());
    } catch (const NumericError& e) {
        result.failed = true;
        result.fail_reason = e.what();
        result.epochs_run = std::max(epoch - 1, 0);
        result.best_epoch = stopper.best_epoch();
        result.best_val_score = have_best ? best_val_native : 0.0;
        result.test_score_at_best = 0.0;
    }
    const auto t_end = std::chrono::steady_clock::now();
    result.wall_time_seconds = std::chrono::duration<double>(t_end - t_start).count();
    return result;
}

/// One RunResult per seed. Runs are independent; with workers > 1 they
/// execute on a small thread pool and results keep the input seed order.
template <std::floating_point Real = double>
std::vector<RunResult> run_protocol(const EncodedDataset& data, const ModelSpec& model_spec,
                                    const OptimizerSpec& opt_spec, TrainConfig cfg,
                                    const std::vector<std::uint64_t>& seeds, int workers = 1) {
    if (seeds.empty()) throw ConfigError("run_protocol: empty seed list");
    std::vector<RunResult> results(seeds.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            cfg.seed = seeds[i];
            results[i] = train_one<Real>(data, model_spec, opt_spec, cfg);
        }
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(workers, static_cast<int>(seeds.size()));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    const auto worker = [&]() {
        TrainConfig local_cfg = cfg;
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= seeds.size()) return;
            try {
                local_cfg.seed = seeds[i];
                results[i] = train_one<Real>(data, model_spec, opt_spec, local_cfg);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return results;
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

inline void append_jsonl(const std::string& path, const nlohmann::json& record) {
    std::ofstream os(path, std::ios::app | std::ios::binary);
    if (!os) throw IoError("cannot open for append: " + path);
    os << record.dump() << '\n';
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::vector<nlohmann::json> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            records.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + " line " + std::to_string(records.size() + 1) + ": " + e.what());
        }
    }
    return records;
}

inline void write_runs_jsonl(const std::string& path, const std::vector<RunResult>& results) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    for (const auto& r : results) os << r.to_json().dump() << '\n';
}

inline void write_timings_jsonl(const std::string& path, const std::vector<RunResult>& results,
                                const std::string& phase) {
    std::ofstream os(path, std::ios::app | std::ios::binary);
    if (!os) throw IoError("cannot open for append: " + path);
    for (const auto& r : results) {
        const nlohmann::json rec{{"dataset", r.dataset},     {"model", r.model},
                                 {"optimizer", r.optimizer}, {"seed", r.seed},
                                 {"phase", phase},           {"wall_time_seconds", r.wall_time_seconds}};
        os << rec.dump() << '\n';
    }
}

}  // namespace tabopt
