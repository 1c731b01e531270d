// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "tabopt/ema.hpp"
#include "tabopt/optim.hpp"

using namespace tabopt;

namespace {

ParamSet one_scalar(double v) {
    ParamSet p;
    p.add("w", Tensor({1}, {v}), ParamRole::vector);
    return p;
}

}  // namespace

TEST_CASE("single ema update") {
    auto p0 = one_scalar(0.0);
    EmaTrackerT<double> ema(0.9, p0);
    auto p1 = one_scalar(1.0);
    ema.update(p1);
    CHECK(ema.shadow().at("w")(0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(ema.update_count() == 1);
}

TEST_CASE("constant parameters close the gap geometrically") {
    auto p0 = one_scalar(0.0);
    EmaTrackerT<double> ema(0.95, p0);
    const auto target = one_scalar(2.0);
    for (int n = 1; n <= 50; ++n) {
        ema.update(target);
        const double expected_gap = std::pow(0.95, n) * 2.0;
        CHECK(ema.shadow().at("w")(0) ==
              doctest::Approx(2.0 - expected_gap).epsilon(1e-12));
    }
}

TEST_CASE("random walk shadow equals a full-history replay") {
    Rng rng(4);
    ParamSet live;
    live.add("w", Tensor::zeros({3, 2}), ParamRole::matrix);
    live.add("b", Tensor::zeros({4}), ParamRole::vector);
    EmaTrackerT<double> ema(0.97, live);

    // Replay oracle: recompute the shadow from the recorded history.
    std::vector<ParamSet> history;
    for (int t = 0; t < 1000; ++t) {
        for (const auto& name : live.names())
            for (auto& v : live.at(name).values()) v += 0.01 * rng.normal();
        ema.update(live);
        history.push_back(live);
    }
    for (const auto& name : live.names()) {
        Tensor expected = Tensor::zeros(live.at(name).shape());  // theta0 = 0
        for (const auto& snapshot : history) {
            for (std::size_t i = 0; i < expected.size(); ++i)
                expected[i] = 0.97 * expected[i] + 0.03 * snapshot.at(name)[i];
        }
        const auto& shadow = ema.shadow().at(name);
        for (std::size_t i = 0; i < expected.size(); ++i)
            CHECK(shadow[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
}

TEST_CASE("eval params") {
    auto p0 = one_scalar(3.0);
    EmaTrackerT<double> ema(0.9, p0);
    // before any update: the initial parameters
    CHECK(ema.eval_params(p0).at("w")(0) == 3.0);

    auto p1 = one_scalar(5.0);
    ema.update(p1);
    const auto eval = ema.eval_params(p1);
    CHECK(eval.at("w")(0) != p1.at("w")(0));  // shadow lags the live value
    CHECK(p1.at("w")(0) == 5.0);              // live parameters untouched
}

TEST_CASE("tiny decay makes the shadow follow immediately") {
    auto p0 = one_scalar(1.0);
    EmaTrackerT<double> ema(1e-12, p0);
    auto p1 = one_scalar(7.0);
    ema.update(p1);
    CHECK(ema.shadow().at("w")(0) == doctest::Approx(7.0).epsilon(1e-9));

    CHECK_THROWS_AS(EmaTrackerT<double>(0.0, p0), ConfigError);
    CHECK_THROWS_AS(EmaTrackerT<double>(1.0, p0), ConfigError);
}

TEST_CASE("serialize round trip is byte identical") {
    Rng rng(9);
    ParamSet live;
    live.add("w", Tensor::zeros({2, 2}), ParamRole::matrix);
    EmaTrackerT<double> ema(0.93, live);
    for (int t = 0; t < 7; ++t) {
        for (auto& v : live.at("w").values()) v += rng.normal();
        ema.update(live);
    }
    std::stringstream buf1(std::ios::in | std::ios::out | std::ios::binary);
    ema.save(buf1);
    auto restored = EmaTrackerT<double>::load(buf1, live);
    std::stringstream buf2(std::ios::in | std::ios::out | std::ios::binary);
    restored.save(buf2);
    CHECK(buf1.str() == buf2.str());
    CHECK(restored.update_count() == ema.update_count());
}

TEST_CASE("ema never alters the optimization trajectory") {
    // Same optimizer, same gradients; one path also maintains an EMA.
    auto spec = OptimizerSpec::defaults(OptRule::adamw);
    spec.lr = 0.05;
    OptimizerT<double> o1(spec), o2(spec);
    ParamSet a;
    a.add("w", Tensor({2, 2}, {1, 2, 3, 4}), ParamRole::matrix);
    ParamSet b = a;
    EmaTrackerT<double> ema(0.9, a);

    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
        GradSet g;
        auto gt = Tensor::zeros({2, 2});
        for (auto& v : gt.values()) v = rng.normal();
        GradSet g2;
        g2.add("w", gt);
        g.add("w", gt);
        o1.step(a, g);
        ema.update(a);
        o2.step(b, g2);
    }
    CHECK(a.at("w") == b.at("w"));  // trajectories bit-identical
    CHECK(!(ema.shadow().at("w") == a.at("w")));
}
