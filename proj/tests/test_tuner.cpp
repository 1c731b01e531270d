// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tabopt/search_space.hpp"
#include "tabopt/tpe.hpp"

using namespace tabopt;

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("space_for assembles the joint model + optimizer tables") {
    SUBCASE("mlp + adamw") {
        const auto [space, budget] = space_for(ModelKind::mlp, OptRule::adamw);
        CHECK(budget == 100);
        const auto* layers = std::get_if<DimUniformInt>(space.find("n_layers"));
        REQUIRE(layers);
        CHECK(layers->lo == 1);
        CHECK(layers->hi == 6);
        const auto* width = std::get_if<DimUniformInt>(space.find("width"));
        REQUIRE(width);
        CHECK(width->lo == 64);
        CHECK(width->hi == 1024);
        CHECK(width->step == 16);
        CHECK(std::get_if<DimZeroOr>(space.find("dropout")) != nullptr);
        const auto* lr = std::get_if<DimLogUniform>(space.find("lr"));
        REQUIRE(lr);
        CHECK(lr->lo == 3e-5);
        CHECK(lr->hi == 1e-3);
        const auto* wd = std::get_if<DimLogUniform>(space.find("weight_decay"));
        REQUIRE(wd);
        CHECK(wd->lo == 0.005);
        CHECK(wd->hi == 5.0);
    }
    SUBCASE("mlp + muon adds the matrix-group lr and pins betas") {
        const auto [space, budget] = space_for(ModelKind::mlp, OptRule::muon);
        const auto* mlr = std::get_if<DimLogUniform>(space.find("muon_lr"));
        REQUIRE(mlr);
        CHECK(mlr->lo == 1e-4);
        CHECK(mlr->hi == 0.03);
        const auto* b1 = std::get_if<DimConstant>(space.find("beta1"));
        REQUIRE(b1);
        CHECK(b1->value.get<double>() == 0.9);
        const auto* b2 = std::get_if<DimConstant>(space.find("beta2"));
        REQUIRE(b2);
        CHECK(b2->value.get<double>() == 0.999);
        const auto* eps = std::get_if<DimConstant>(space.find("eps"));
        REQUIRE(eps);
        CHECK(eps->value.get<double>() == 1e-8);
    }
    SUBCASE("mlp_ple adds embedding dims and uses the 1..5 depth range") {
        const auto [space, budget] = space_for(ModelKind::mlp_ple, OptRule::adamw);
        const auto* emb = std::get_if<DimUniformInt>(space.find("d_embedding"));
        REQUIRE(emb);
        CHECK(emb->lo == 8);
        CHECK(emb->hi == 32);
        CHECK(emb->step == 4);
        const auto* bins = std::get_if<DimUniformInt>(space.find("n_bins"));
        REQUIRE(bins);
        CHECK(bins->lo == 2);
        CHECK(bins->hi == 128);
        const auto* layers = std::get_if<DimUniformInt>(space.find("n_layers"));
        CHECK(layers->hi == 5);
    }
    SUBCASE("reduced budget for the packed ensemble on large datasets") {
        CHECK(space_for(ModelKind::tabm_packed, OptRule::adamw, false, true).budget == 50);
        CHECK(space_for(ModelKind::tabm_packed, OptRule::adamw, false, false).budget == 100);
        CHECK(space_for(ModelKind::mlp, OptRule::adamw, false, true).budget == 100);
        const auto [space, _] = space_for(ModelKind::tabm_packed, OptRule::adamw);
        const auto* k = std::get_if<DimConstant>(space.find("k"));
        REQUIRE(k);
        CHECK(k->value.get<int>() == 16);
    }
    SUBCASE("ema flag adds the decay dimension") {
        const auto [space, _] = space_for(ModelKind::mlp, OptRule::adamw, true);
        const auto* d = std::get_if<DimLogUniform>(space.find("ema_decay"));
        REQUIRE(d);
        CHECK(d->lo == 0.9);
        CHECK(d->hi == 0.999);
    }
    SUBCASE("sgd block pins momentum and dampening") {
        const auto [space, _] = space_for(ModelKind::mlp, OptRule::sgd);
        const auto* lr = std::get_if<DimLogUniform>(space.find("lr"));
        CHECK(lr->lo == 1e-3);
        CHECK(lr->hi == 0.1);
        CHECK(std::get_if<DimConstant>(space.find("momentum")) != nullptr);
    }
}

TEST_CASE("uniform samples respect bounds, steps, and the zero branch") {
    const auto [space, _] = space_for(ModelKind::mlp, OptRule::adamw);
    Rng rng(1);
    int zeros = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto config = space.sample_uniform(rng);
        CHECK(space.contains(config));
        const auto width = config.at("width").get<std::int64_t>();
        CHECK(width % 16 == 0);
        CHECK(width >= 64);
        const double dropout = config.at("dropout").get<double>();
        if (dropout == 0.0) ++zeros;
    }
    // zero branch prior is one half
    CHECK(zeros > n * 0.45);
    CHECK(zeros < n * 0.55);
}

TEST_CASE("every tpe proposal stays in the declared space") {
    for (const auto rule : {OptRule::adamw, OptRule::muon, OptRule::sgd}) {
        const auto [space, _] = space_for(ModelKind::mlp_ple, rule, rule == OptRule::adamw);
        std::vector<TrialRecord> history;
        Rng rng(2);
        for (int i = 0; i < 300; ++i) {
            Rng trial_rng = rng.split(static_cast<std::uint64_t>(i));
            TrialRecord rec;
            rec.index = i;
            rec.config = sample_config(space, history, trial_rng);
            CHECK(space.contains(rec.config));
            // synthetic objective so the good/bad split has structure
            rec.objective = -std::abs(std::log(rec.config.at("lr").get<double>()) - std::log(2e-4));
            history.push_back(std::move(rec));
        }
    }
}

TEST_CASE("tpe concentrates samples where good trials live") {
    const auto [space, _] = space_for(ModelKind::mlp, OptRule::adamw);

    // History: log-spaced lr grid, objective peaked at lr = 1e-4.
    std::vector<TrialRecord> history;
    Rng seed_rng(3);
    for (int i = 0; i < 40; ++i) {
        Rng r = seed_rng.split(static_cast<std::uint64_t>(i));
        TrialRecord rec;
        rec.index = i;
        rec.config = space.sample_uniform(r);
        const double lr = rec.config.at("lr").get<double>();
        rec.objective = -std::pow(std::log(lr) - std::log(1e-4), 2);
        history.push_back(std::move(rec));
    }

    std::vector<double> lrs;
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        Rng r = rng.split(static_cast<std::uint64_t>(i));
        const auto config = sample_config(space, history, r);
        CHECK(space.contains(config));
        lrs.push_back(config.at("lr").get<double>());
    }
    const double uniform_median = std::sqrt(3e-5 * 1e-3);  // geometric midpoint
    const double med = median(lrs);
    CHECK(std::abs(std::log(med) - std::log(1e-4)) <
          std::abs(std::log(uniform_median) - std::log(1e-4)));
}

TEST_CASE("zero-or dimension follows the good branch") {
    SearchSpace space;
    space.add("dropout", DimZeroOr{DimUniform{0.0, 0.5}});

    std::vector<TrialRecord> history;
    Rng seed_rng(5);
    for (int i = 0; i < 40; ++i) {
        Rng r = seed_rng.split(static_cast<std::uint64_t>(i));
        TrialRecord rec;
        rec.index = i;
        rec.config = space.sample_uniform(r);
        const double d = rec.config.at("dropout").get<double>();
        rec.objective = d == 0.0 ? 1.0 : -1.0;  // zero always wins
        history.push_back(std::move(rec));
    }
    int zeros = 0;
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        Rng r = rng.split(static_cast<std::uint64_t>(i));
        if (sample_config(space, history, r).at("dropout").get<double>() == 0.0) ++zeros;
    }
    CHECK(zeros > 100);
}

TEST_CASE("tune with the known-optimum stub objective") {
    const auto [space, _] = space_for(ModelKind::mlp, OptRule::adamw);
    const auto stub = [](const nlohmann::json& config) -> std::optional<double> {
        const double lr = config.at("lr").get<double>();
        return -std::pow(lr - 3e-4, 2);
    };

    SUBCASE("budget 1 returns the single sampled config") {
        const auto result = tune(space, 1, 7, stub);
        CHECK(result.trials.size() == 1);
        CHECK(result.best_index == 0);
        CHECK(result.best_config == result.trials[0].config);
    }
    SUBCASE("50 trials land within 3x of the optimum") {
        const auto result = tune(space, 50, 7, stub);
        const double lr = result.best_config.at("lr").get<double>();
        CHECK(lr > 1e-4);
        CHECK(lr < 9e-4);
    }
    SUBCASE("same seed, same trial sequence, same winner") {
        const auto a = tune(space, 25, 11, stub);
        const auto b = tune(space, 25, 11, stub);
        REQUIRE(a.trials.size() == b.trials.size());
        for (std::size_t i = 0; i < a.trials.size(); ++i)
            CHECK(a.trials[i].config == b.trials[i].config);
        CHECK(a.best_index == b.best_index);
        CHECK(a.best_config == b.best_config);
    }
    SUBCASE("ties keep the earliest trial") {
        const auto flat = [](const nlohmann::json&) -> std::optional<double> { return 1.0; };
        const auto result = tune(space, 10, 3, flat);
        CHECK(result.best_index == 0);
    }
    SUBCASE("all trials failed is an error") {
        const auto fail = [](const nlohmann::json&) -> std::optional<double> {
            return std::nullopt;
        };
        CHECK_THROWS_AS(tune(space, 5, 0, fail), Error);
    }
    SUBCASE("failed trials are recorded and tolerated") {
        int calls = 0;
        const auto flaky = [&](const nlohmann::json& config) -> std::optional<double> {
            ++calls;
            if (calls % 3 == 0) return std::nullopt;
            return -std::pow(config.at("lr").get<double>() - 3e-4, 2);
        };
        const auto result = tune(space, 15, 5, flaky);
        int failed = 0;
        for (const auto& t : result.trials) failed += t.status == "failed" ? 1 : 0;
        CHECK(failed == 5);
        CHECK(result.best_index >= 0);
    }
}

TEST_CASE("tpe beats random search on the stub objective") {
    const auto [space, _] = space_for(ModelKind::mlp, OptRule::adamw);
    const auto stub = [](const nlohmann::json& config) {
        const double lr = config.at("lr").get<double>();
        return -std::pow(std::log(lr) - std::log(3e-4), 2);
    };

    std::vector<double> tpe_err, random_err;
    for (int rep = 0; rep < 20; ++rep) {
        const auto result =
            tune(space, 50, static_cast<std::uint64_t>(rep),
                 [&](const nlohmann::json& c) -> std::optional<double> { return stub(c); });
        tpe_err.push_back(-result.best_objective);

        Rng rng(static_cast<std::uint64_t>(1000 + rep));
        double best = -1e300;
        for (int i = 0; i < 50; ++i) best = std::max(best, stub(space.sample_uniform(rng)));
        random_err.push_back(-best);
    }
    CHECK(median(tpe_err) <= median(random_err));
}

TEST_CASE("trial log replay reproduces the winner without retraining") {
    const auto [space, _] = space_for(ModelKind::mlp, OptRule::lion);
    const auto stub = [](const nlohmann::json& config) -> std::optional<double> {
        return -std::abs(config.at("lr").get<double>() - 1e-4);
    };
    const auto result = tune(space, 30, 13, stub);

    // Serialize and parse back, as tuning.jsonl would.
    std::vector<TrialRecord> parsed;
    for (const auto& t : result.trials) parsed.push_back(TrialRecord::from_json(t.to_json()));
    const auto replayed = replay_tuning_log(parsed);
    CHECK(replayed.best_index == result.best_index);
    CHECK(replayed.best_config == result.best_config);
    CHECK(replayed.best_objective == result.best_objective);
}

TEST_CASE("search space json round trip") {
    const auto [space, _] = space_for(ModelKind::mlp_ple, OptRule::muon, true);
    const auto j = space.to_json();
    const SearchSpace back = SearchSpace::from_json(j);
    CHECK(back.to_json() == j);
    Rng rng(17);
    for (int i = 0; i < 100; ++i) {
        const auto config = back.sample_uniform(rng);
        CHECK(space.contains(config));
    }
}

TEST_CASE("config_to_specs maps sampled values onto the model and optimizer") {
    nlohmann::json config{{"n_layers", 3},      {"width", 208},        {"dropout", 0.1},
                          {"lr", 2e-4},         {"weight_decay", 0.5}, {"muon_lr", 0.011},
                          {"beta1", 0.9},       {"beta2", 0.999},      {"eps", 1e-8},
                          {"ema_decay", 0.95}};
    const auto [model, opt] = config_to_specs(ModelKind::mlp, OptRule::muon, true, config);
    CHECK(model.n_layers == 3);
    CHECK(model.width == 208);
    CHECK(opt.rule == OptRule::muon);
    CHECK(opt.muon_lr == 0.011);
    CHECK(opt.ema_decay.has_value());
    CHECK(*opt.ema_decay == 0.95);
    CHECK(opt.method_name() == "muon+ema");
}
