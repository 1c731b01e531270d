// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tabopt/common.hpp"
#include "tabopt/models.hpp"
#include "tabopt/optim.hpp"
#include "tabopt/rng.hpp"

namespace tabopt {

// Dimension kinds found in the tuning tables: integer ranges with an
// optional step, linear and log-scale continuous ranges, the "{0, ...}"
// spike-or-range form, plain categories, and pinned constants.

struct DimUniformInt {
    std::int64_t lo, hi;
    std::int64_t step = 1;

    std::int64_t grid_size() const { return (hi - lo) / step + 1; }
    std::int64_t value_at(std::int64_t k) const { return lo + k * step; }
};

struct DimUniform {
    double lo, hi;
};

struct DimLogUniform {
    double lo, hi;
};

/// Half point mass at zero, half the inner continuous distribution.
struct DimZeroOr {
    std::variant<DimUniform, DimLogUniform> inner;
};

struct DimCategorical {
    std::vector<std::string> values;
};

struct DimConstant {
    nlohmann::json value;
};

using Dim = std::variant<DimUniformInt, DimUniform, DimLogUniform, DimZeroOr, DimCategorical,
                         DimConstant>;

class SearchSpace {
public:
    void add(std::string name, Dim dim) { dims_.emplace_back(std::move(name), std::move(dim)); }

    const std::vector<std::pair<std::string, Dim>>& dims() const { return dims_; }
    bool empty() const { return dims_.empty(); }

    const Dim* find(const std::string& name) const {
        for (const auto& [n, d] : dims_)
            if (n == name) return &d;
        return nullptr;
    }

    /// Uniform draw from the raw space (used for TPE startup trials).
    nlohmann::json sample_uniform(Rng& rng) const {
        nlohmann::json config = nlohmann::json::object();
        for (const auto& [name, dim] : dims_) config[name] = sample_dim_uniform(dim, rng);
        return config;
    }

    /// Whether every configured value lies inside its declared dimension.
    bool contains(const nlohmann::json& config) const {
        for (const auto& [name, dim] : dims_) {
            if (!config.contains(name)) return false;
            if (!dim_contains(dim, config.at(name))) return false;
        }
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json dims = nlohmann::json::array();
        for (const auto& [name, dim] : dims_) {
            nlohmann::json d = dim_to_json(dim);
            d["name"] = name;
            dims.push_back(std::move(d));
        }
        return {{"dims", dims}};
    }

    static SearchSpace from_json(const nlohmann::json& j) {
        SearchSpace space;
        for (const auto& d : j.at("dims"))
            space.add(d.at("name").get<std::string>(), dim_from_json(d));
        return space;
    }

    static nlohmann::json sample_dim_uniform(const Dim& dim, Rng& rng) {
        if (const auto* di = std::get_if<DimUniformInt>(&dim))
            return di->value_at(rng.uniform_int(0, di->grid_size() - 1));
        if (const auto* du = std::get_if<DimUniform>(&dim)) return rng.uniform(du->lo, du->hi);
        if (const auto* dl = std::get_if<DimLogUniform>(&dim))
            return std::exp(rng.uniform(std::log(dl->lo), std::log(dl->hi)));
        if (const auto* dz = std::get_if<DimZeroOr>(&dim)) {
            if (rng.bernoulli(constants::kZeroBranchPrior)) return 0.0;
            if (const auto* iu = std::get_if<DimUniform>(&dz->inner))
                return rng.uniform(iu->lo, iu->hi);
            const auto& il = std::get<DimLogUniform>(dz->inner);
            return std::exp(rng.uniform(std::log(il.lo), std::log(il.hi)));
        }
        if (const auto* dc = std::get_if<DimCategorical>(&dim))
            return dc->values[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(dc->values.size()) - 1))];
        return std::get<DimConstant>(dim).value;
    }

    static bool dim_contains(const Dim& dim, const nlohmann::json& v) {
        if (const auto* di = std::get_if<DimUniformInt>(&dim)) {
            if (!v.is_number()) return false;
            const auto x = v.get<std::int64_t>();
            return x >= di->lo && x <= di->hi && (x - di->lo) % di->step == 0;
        }
        if (const auto* du = std::get_if<DimUniform>(&dim)) {
            if (!v.is_number()) return false;
            const double x = v.get<double>();
            return x >= du->lo && x <= du->hi;
        }
        if (const auto* dl = std::get_if<DimLogUniform>(&dim)) {
            if (!v.is_number()) return false;
            const double x = v.get<double>();
            return x >= dl->lo && x <= dl->hi;
        }
        if (const auto* dz = std::get_if<DimZeroOr>(&dim)) {
            if (!v.is_number()) return false;
            const double x = v.get<double>();
            if (x == 0.0) return true;
            if (const auto* iu = std::get_if<DimUniform>(&dz->inner))
                return x >= iu->lo && x <= iu->hi;
            const auto& il = std::get<DimLogUniform>(dz->inner);
            return x >= il.lo && x <= il.hi;
        }
        if (const auto* dc = std::get_if<DimCategorical>(&dim)) {
            if (!v.is_string()) return false;
            const auto s = v.get<std::string>();
            for (const auto& val : dc->values)
                if (val == s) return true;
            return false;
        }
        return v == std::get<DimConstant>(dim).value;
    }

private:
    static nlohmann::json dim_to_json(const Dim& dim) {
        if (const auto* di = std::get_if<DimUniformInt>(&dim))
            return {{"type", "uniform_int"}, {"lo", di->lo}, {"hi", di->hi}, {"step", di->step}};
        if (const auto* du = std::get_if<DimUniform>(&dim))
            return {{"type", "uniform"}, {"lo", du->lo}, {"hi", du->hi}};
        if (const auto* dl = std::get_if<DimLogUniform>(&dim))
            return {{"type", "log_uniform"}, {"lo", dl->lo}, {"hi", dl->hi}};
        if (const auto* dz = std::get_if<DimZeroOr>(&dim)) {
            nlohmann::json inner;
            if (const auto* iu = std::get_if<DimUniform>(&dz->inner))
                inner = {{"type", "uniform"}, {"lo", iu->lo}, {"hi", iu->hi}};
            else {
                const auto& il = std::get<DimLogUniform>(dz->inner);
                inner = {{"type", "log_uniform"}, {"lo", il.lo}, {"hi", il.hi}};
            }
            return {{"type", "zero_or"}, {"inner", inner}};
        }
        if (const auto* dc = std::get_if<DimCategorical>(&dim))
            return {{"type", "categorical"}, {"values", dc->values}};
        return {{"type", "constant"}, {"value", std::get<DimConstant>(dim).value}};
    }

    static Dim dim_from_json(const nlohmann::json& d) {
        const auto type = d.at("type").get<std::string>();
        if (type == "uniform_int")
            return DimUniformInt{d.at("lo").get<std::int64_t>(), d.at("hi").get<std::int64_t>(),
                                 d.value("step", std::int64_t{1})};
        if (type == "uniform") return DimUniform{d.at("lo").get<double>(), d.at("hi").get<double>()};
        if (type == "log_uniform")
            return DimLogUniform{d.at("lo").get<double>(), d.at("hi").get<double>()};
        if (type == "zero_or") {
            const auto& inner = d.at("inner");
            const auto itype = inner.at("type").get<std::string>();
            if (itype == "uniform")
                return DimZeroOr{DimUniform{inner.at("lo").get<double>(), inner.at("hi").get<double>()}};
            if (itype == "log_uniform")
                return DimZeroOr{
                    DimLogUniform{inner.at("lo").get<double>(), inner.at("hi").get<double>()}};
            throw ConfigError("zero_or inner must be uniform or log_uniform");
        }
        if (type == "categorical")
            return DimCategorical{d.at("values").get<std::vector<std::string>>()};
        if (type == "constant") return DimConstant{d.at("value")};
        throw ConfigError("unknown dimension type: " + type);
    }

    std::vector<std::pair<std::string, Dim>> dims_;
};

// ---------------------------------------------------------------------------
// The benchmark's joint model + optimizer spaces
// ---------------------------------------------------------------------------

/// Joint search space for a (model family, optimizer rule) pair, plus the
/// trial budget. large_dataset selects the reduced ensemble-model budget.
struct SpaceWithBudget {
    SearchSpace space;
    int budget = 100;
};

inline SpaceWithBudget space_for(ModelKind model, OptRule rule, bool ema = false,
                                 bool large_dataset = false) {
    SearchSpace s;

    // Model block.
    switch (model) {
        case ModelKind::mlp:
            s.add("n_layers", DimUniformInt{1, 6});
            break;
        case ModelKind::mlp_ple:
        case ModelKind::tabm_packed:
            s.add("n_layers", DimUniformInt{1, 5});
            break;
    }
    s.add("width", DimUniformInt{64, 1024, 16});
    s.add("dropout", DimZeroOr{DimUniform{0.0, 0.5}});
    if (model == ModelKind::mlp_ple) {
        s.add("d_embedding", DimUniformInt{8, 32, 4});
        s.add("n_bins", DimUniformInt{2, 128});
    }
    if (model == ModelKind::tabm_packed)
        s.add("k", DimConstant{nlohmann::json(constants::kTabmK)});

    // Optimizer block.
    const auto lr_default = DimLogUniform{3e-5, 1e-3};
    switch (rule) {
        case OptRule::adan:
            s.add("lr", DimLogUniform{1e-4, 1e-2});
            break;
        case OptRule::lion:
        case OptRule::signum:
            s.add("lr", DimLogUniform{1e-5, 1e-3});
            break;
        case OptRule::schedule_free_adamw:
            s.add("lr", DimLogUniform{1e-4, 0.03});
            break;
        case OptRule::sgd:
            s.add("lr", DimLogUniform{1e-3, 0.1});
            s.add("momentum", DimConstant{nlohmann::json(constants::kSgdMomentum)});
            s.add("dampening", DimConstant{nlohmann::json(constants::kSgdDampening)});
            break;
        default:
            s.add("lr", lr_default);
    }
    s.add("weight_decay", DimLogUniform{0.005, 5.0});
    if (rule == OptRule::ademamix) s.add("alpha", DimUniform{1.0, 8.0});
    if (rule == OptRule::muon) {
        s.add("muon_lr", DimLogUniform{1e-4, 0.03});
        s.add("beta1", DimConstant{nlohmann::json(constants::kAdamBeta1)});
        s.add("beta2", DimConstant{nlohmann::json(constants::kAdamBeta2)});
        s.add("eps", DimConstant{nlohmann::json(constants::kAdamEps)});
    }
    if (ema) s.add("ema_decay", DimLogUniform{0.9, 0.999});

    SpaceWithBudget out;
    out.space = std::move(s);
    out.budget = (model == ModelKind::tabm_packed && large_dataset) ? 50 : 100;
    return out;
}

/// Split a sampled configuration into the model spec and optimizer spec it
/// describes.
inline std::pair<ModelSpec, OptimizerSpec> config_to_specs(ModelKind model, OptRule rule, bool ema,
                                                           const nlohmann::json& config) {
    ModelSpec ms;
    ms.kind = model;
    ms.n_layers = config.value("n_layers", ms.n_layers);
    ms.width = config.value("width", ms.width);
    ms.dropout = config.value("dropout", ms.dropout);
    ms.d_embedding = config.value("d_embedding", ms.d_embedding);
    ms.n_bins = config.value("n_bins", ms.n_bins);
    ms.k = config.value("k", ms.k);

    OptimizerSpec os = OptimizerSpec::defaults(rule);
    os.lr = config.value("lr", os.lr);
    os.weight_decay = config.value("weight_decay", os.weight_decay);
    os.beta1 = config.value("beta1", os.beta1);
    os.beta2 = config.value("beta2", os.beta2);
    os.eps = config.value("eps", os.eps);
    os.alpha = config.value("alpha", os.alpha);
    os.muon_lr = config.value("muon_lr", os.muon_lr);
    os.momentum = config.value("momentum", os.momentum);
    os.dampening = config.value("dampening", os.dampening);
    if (ema) os.ema_decay = config.value("ema_decay", 0.99);
    return {ms, os};
}

}  // namespace tabopt
