// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "tabopt/metrics.hpp"
#include "tabopt/trainer.hpp"

using namespace tabopt;

TEST_CASE("early stopper: peak at epoch 30 stops at epoch 46") {
    EarlyStopper stopper(16);
    int epoch = 0;
    // validation improves every epoch until 30, never afterwards
    for (epoch = 1; epoch <= 1000; ++epoch) {
        const double score = epoch <= 30 ? static_cast<double>(epoch) : 0.0;
        stopper.observe(epoch, score);
        if (stopper.should_stop()) break;
    }
    CHECK(epoch == 46);
    CHECK(stopper.best_epoch() == 30);
    CHECK(stopper.best() == 30.0);
}

TEST_CASE("early stopper: equal scores do not count as improvement") {
    EarlyStopper stopper(2);
    CHECK(stopper.observe(1, 1.0));
    CHECK(!stopper.observe(2, 1.0));
    CHECK(!stopper.should_stop());
    CHECK(!stopper.observe(3, 1.0));
    CHECK(stopper.should_stop());
    CHECK(stopper.best_epoch() == 1);
}

TEST_CASE("metrics") {
    SUBCASE("accuracy argmax") {
        Matrix probs = Matrix::matrix({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
        CHECK(accuracy(probs, {0, 1, 1}) == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("perfect separation gives auc 1") {
        CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
        CHECK(roc_auc({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1}) == 0.0);
    }
    SUBCASE("auc matches the pairwise-counting oracle, ties included") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> scores(10);
            std::vector<int> labels(10);
            for (int i = 0; i < 10; ++i) {
                // Coarse grid forces ties.
                scores[static_cast<std::size_t>(i)] =
                    static_cast<double>(rng.uniform_int(0, 4)) / 4.0;
                labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
            }
            int n_pos = 0;
            for (const int y : labels) n_pos += y;
            if (n_pos == 0 || n_pos == 10) continue;

            // O(n^2) oracle: wins + half ties over positive/negative pairs.
            double wins = 0, pairs = 0;
            for (int i = 0; i < 10; ++i) {
                if (labels[static_cast<std::size_t>(i)] != 1) continue;
                for (int j = 0; j < 10; ++j) {
                    if (labels[static_cast<std::size_t>(j)] != 0) continue;
                    pairs += 1;
                    const double si = scores[static_cast<std::size_t>(i)];
                    const double sj = scores[static_cast<std::size_t>(j)];
                    wins += si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
                }
            }
            CHECK(roc_auc(scores, labels) == doctest::Approx(wins / pairs).epsilon(1e-12));
        }
    }
    SUBCASE("rmse zero when predictions equal labels") {
        CHECK(rmse({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    }
    SUBCASE("single-class auc is an error") {
        CHECK_THROWS_WITH_AS(roc_auc({0.5, 0.6}, {1, 1}), "undefined AUC: single-class labels",
                             ConfigError);
    }
    SUBCASE("orientation") {
        CHECK(oriented_score(MetricKind::rmse, 2.0) == -2.0);
        CHECK(oriented_score(MetricKind::accuracy, 0.9) == 0.9);
    }
}

TEST_CASE("train_one learns the easy classification task") {
    auto [meta, splits] = make_synthetic(SyntheticKind::two_gaussians, 600, 3);
    const EncodedDataset data(meta, splits, 0);

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 2;
    model.width = 32;
    auto opt = OptimizerSpec::defaults(OptRule::adamw);
    opt.lr = 3e-3;
    TrainConfig cfg;
    cfg.seed = 0;
    cfg.max_epochs = 60;

    const RunResult r = train_one<double>(data, model, opt, cfg);
    CHECK(!r.failed);
    CHECK(r.test_score_at_best > 0.95);
    CHECK(r.best_epoch <= r.epochs_run);
    CHECK(r.wall_time_seconds > 0.0);
    CHECK(r.metric == "accuracy");
    // test data touched exactly once, at the best checkpoint
    CHECK(data.test_read_count() == 1);
    // patience accounting holds whenever the cap was not hit
    if (r.epochs_run < cfg.max_epochs) CHECK(r.epochs_run - r.best_epoch == cfg.patience);
}

TEST_CASE("identical runs are bitwise identical") {
    auto [meta, splits] = make_synthetic(SyntheticKind::two_gaussians, 300, 8);
    const EncodedDataset data(meta, splits, 0);

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 1;
    model.width = 16;
    model.dropout = 0.2;  // exercises the seeded dropout stream
    auto opt = OptimizerSpec::defaults(OptRule::adamw);
    opt.lr = 1e-3;
    TrainConfig cfg;
    cfg.seed = 4;
    cfg.max_epochs = 12;

    const RunResult a = train_one<double>(data, model, opt, cfg);
    const RunResult b = train_one<double>(data, model, opt, cfg);
    CHECK(a.best_val_score == b.best_val_score);
    CHECK(a.test_score_at_best == b.test_score_at_best);
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.epochs_run == b.epochs_run);
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("regression path reports positive rmse and improves on the mean") {
    auto [meta, splits] = make_synthetic(SyntheticKind::linear_regression, 500, 1,
                                         SyntheticOptions{6.0, 0.1});
    const EncodedDataset data(meta, splits, 0);
    CHECK(data.test_label_std() > 0.0);

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 1;
    model.width = 32;
    auto opt = OptimizerSpec::defaults(OptRule::adamw);
    opt.lr = 5e-3;
    TrainConfig cfg;
    cfg.seed = 0;
    cfg.max_epochs = 80;

    const RunResult r = train_one<double>(data, model, opt, cfg);
    CHECK(!r.failed);
    CHECK(r.test_score_at_best > 0.0);                      // rmse is positive
    CHECK(r.test_score_at_best < data.test_label_std());    // beats predicting the mean
}

TEST_CASE("diverging run is marked failed, not thrown") {
    auto [meta, splits] = make_synthetic(SyntheticKind::two_gaussians, 300, 2);
    const EncodedDataset data(meta, splits, 0);

    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 2;
    model.width = 16;
    auto opt = OptimizerSpec::defaults(OptRule::sgd);
    opt.lr = 1e200;  // guaranteed overflow
    TrainConfig cfg;
    cfg.seed = 0;
    cfg.max_epochs = 5;

    const RunResult r = train_one<double>(data, model, opt, cfg);
    CHECK(r.failed);
    CHECK(!r.fail_reason.empty());
}

TEST_CASE("ema and schedule-free evaluate their averaged weights") {
    auto [meta, splits] = make_synthetic(SyntheticKind::two_gaussians, 400, 6);
    const EncodedDataset data(meta, splits, 0);
    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 1;
    model.width = 16;
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.max_epochs = 10;

    auto with_ema = OptimizerSpec::defaults(OptRule::adamw);
    with_ema.lr = 3e-3;
    with_ema.ema_decay = 0.95;
    const RunResult r1 = train_one<double>(data, model, with_ema, cfg);
    CHECK(!r1.failed);
    CHECK(r1.optimizer == "adamw+ema");

    auto sf = OptimizerSpec::defaults(OptRule::schedule_free_adamw);
    sf.lr = 3e-3;
    const RunResult r2 = train_one<double>(data, model, sf, cfg);
    CHECK(!r2.failed);
}

TEST_CASE("run_protocol") {
    auto [meta, splits] = make_synthetic(SyntheticKind::two_gaussians, 300, 5);
    const EncodedDataset data(meta, splits, 0);
    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 1;
    model.width = 8;
    auto opt = OptimizerSpec::defaults(OptRule::adamw);
    opt.lr = 3e-3;
    TrainConfig cfg;
    cfg.max_epochs = 6;

    SUBCASE("one result per seed, replayable") {
        std::vector<std::uint64_t> seeds;
        for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
        const auto results = run_protocol<double>(data, model, opt, cfg, seeds);
        CHECK(results.size() == 10);
        for (std::size_t i = 0; i < 10; ++i) CHECK(results[i].seed == i);

        const auto again = run_protocol<double>(data, model, opt, cfg, seeds);
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(results[i].test_score_at_best == again[i].test_score_at_best);
    }
    SUBCASE("empty seed list is an error") {
        CHECK_THROWS_AS(run_protocol<double>(data, model, opt, cfg, {}), ConfigError);
    }
    SUBCASE("worker pool preserves seed order and values") {
        const std::vector<std::uint64_t> seeds{0, 1, 2, 3};
        const auto seq = run_protocol<double>(data, model, opt, cfg, seeds, 1);
        const auto par = run_protocol<double>(data, model, opt, cfg, seeds, 3);
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            CHECK(seq[i].seed == par[i].seed);
            CHECK(seq[i].test_score_at_best == par[i].test_score_at_best);
            CHECK(seq[i].best_epoch == par[i].best_epoch);
        }
    }
}

TEST_CASE("runs.jsonl round trip") {
    auto [meta, splits] = make_synthetic(SyntheticKind::two_gaussians, 200, 11);
    const EncodedDataset data(meta, splits, 0);
    ModelSpec model;
    model.kind = ModelKind::mlp;
    model.n_layers = 1;
    model.width = 8;
    auto opt = OptimizerSpec::defaults(OptRule::adamw);
    TrainConfig cfg;
    cfg.max_epochs = 3;

    const auto results = run_protocol<double>(data, model, opt, cfg, {0, 1});
    const auto path = (std::filesystem::temp_directory_path() / "tabopt_runs_test.jsonl").string();
    write_runs_jsonl(path, results);
    const auto records = read_jsonl(path);
    REQUIRE(records.size() == 2);
    const RunResult back = RunResult::from_json(records[0]);
    CHECK(back.dataset == results[0].dataset);
    CHECK(back.test_score_at_best == results[0].test_score_at_best);
    CHECK(back.seed == results[0].seed);
    // wall time stays out of the deterministic record
    CHECK(!records[0].contains("wall_time_seconds"));
    CHECK(records[0].contains("constants"));
}
