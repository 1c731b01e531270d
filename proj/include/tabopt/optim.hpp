// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabopt/constants.hpp"
#include "tabopt/linalg.hpp"
#include "tabopt/newton_schulz.hpp"
#include "tabopt/nn.hpp"
#include "tabopt/params.hpp"

namespace tabopt {

enum class OptRule {
    adamw,
    sgd,
    nadamw,
    radam,
    adopt,
    adan,
    adabelief,
    cautious_adamw,
    ademamix,
    lion,
    signum,
    soap,
    muon,
    schedule_free_adamw,
};

inline const std::vector<std::pair<OptRule, const char*>>& opt_rule_names() {
    static const std::vector<std::pair<OptRule, const char*>> names = {
        {OptRule::adamw, "adamw"},
        {OptRule::sgd, "sgd"},
        {OptRule::nadamw, "nadamw"},
        {OptRule::radam, "radam"},
        {OptRule::adopt, "adopt"},
        {OptRule::adan, "adan"},
        {OptRule::adabelief, "adabelief"},
        {OptRule::cautious_adamw, "cautious_adamw"},
        {OptRule::ademamix, "ademamix"},
        {OptRule::lion, "lion"},
        {OptRule::signum, "signum"},
        {OptRule::soap, "soap"},
        {OptRule::muon, "muon"},
        {OptRule::schedule_free_adamw, "schedule_free_adamw"},
    };
    return names;
}

inline const char* to_string(OptRule r) {
    for (const auto& [rule, name] : opt_rule_names())
        if (rule == r) return name;
    return "?";
}

inline OptRule parse_opt_rule(const std::string& s) {
    for (const auto& [rule, name] : opt_rule_names())
        if (s == name) return rule;
    throw ConfigError("unknown optimizer rule: " + s);
}

/// Which update rule to run and its hyperparameters. Rule-specific fields
/// are pre-filled by defaults(); the tuner only overrides the tuned ones.
struct OptimizerSpec {
    OptRule rule = OptRule::adamw;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = constants::kAdamBeta1;
    double beta2 = constants::kAdamBeta2;
    double beta3 = 0.0;  // adan third EMA / ademamix slow EMA
    double eps = constants::kAdamEps;
    double alpha = 0.0;          // ademamix slow-EMA mix-in
    double muon_lr = 0.02;       // muon matrix-group learning rate
    double muon_momentum = constants::kMuonMomentum;
    double momentum = 0.0;       // sgd
    double dampening = 0.0;      // sgd
    int soap_refresh = constants::kSoapRefreshPeriod;
    std::optional<double> ema_decay;  // weight averaging wrapper; absent = off

    static OptimizerSpec defaults(OptRule rule) {
        OptimizerSpec s;
        s.rule = rule;
        switch (rule) {
            case OptRule::lion:
                s.beta1 = constants::kLionBeta1;
                s.beta2 = constants::kLionBeta2;
                break;
            case OptRule::signum:
                s.beta1 = constants::kSignumBeta;
                break;
            case OptRule::adopt:
                s.eps = constants::kAdoptEps;
                break;
            case OptRule::adan:
                s.beta1 = constants::kAdanBeta1;
                s.beta2 = constants::kAdanBeta2;
                s.beta3 = constants::kAdanBeta3;
                break;
            case OptRule::ademamix:
                s.beta3 = constants::kAdemamixBeta3;
                s.alpha = constants::kAdemamixAlpha;
                break;
            case OptRule::sgd:
                s.momentum = constants::kSgdMomentum;
                s.dampening = constants::kSgdDampening;
                s.lr = 0.01;
                break;
            case OptRule::muon:
                s.muon_momentum = constants::kMuonMomentum;
                break;
            default:
                break;
        }
        return s;
    }

    void validate() const {
        if (lr <= 0.0) throw ConfigError("learning rate must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("betas must be in [0, 1)");
        if (eps <= 0.0) throw ConfigError("eps must be positive");
        if (rule == OptRule::muon && muon_lr <= 0.0)
            throw ConfigError("muon learning rate must be positive");
        if (rule == OptRule::soap && soap_refresh < 1)
            throw ConfigError("soap refresh period must be >= 1");
        if (ema_decay && (*ema_decay <= 0.0 || *ema_decay >= 1.0))
            throw ConfigError("ema decay must be in (0, 1)");
    }

    /// Method identifier used in run records and reports.
    std::string method_name() const {
        std::string name = to_string(rule);
        if (ema_decay) name += "+ema";
        return name;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"rule", to_string(rule)},
                         {"lr", lr},
                         {"weight_decay", weight_decay},
                         {"beta1", beta1},
                         {"beta2", beta2},
                         {"eps", eps}};
        if (rule == OptRule::adan || rule == OptRule::ademamix) j["beta3"] = beta3;
        if (rule == OptRule::ademamix) j["alpha"] = alpha;
        if (rule == OptRule::muon) {
            j["muon_lr"] = muon_lr;
            j["muon_momentum"] = muon_momentum;
        }
        if (rule == OptRule::sgd) {
            j["momentum"] = momentum;
            j["dampening"] = dampening;
        }
        if (rule == OptRule::soap) j["soap_refresh"] = soap_refresh;
        if (ema_decay) j["ema_decay"] = *ema_decay;
        return j;
    }

    static OptimizerSpec from_json(const nlohmann::json& j) {
        OptimizerSpec s = defaults(parse_opt_rule(j.at("rule").get<std::string>()));
        s.lr = j.value("lr", s.lr);
        s.weight_decay = j.value("weight_decay", s.weight_decay);
        s.beta1 = j.value("beta1", s.beta1);
        s.beta2 = j.value("beta2", s.beta2);
        s.beta3 = j.value("beta3", s.beta3);
        s.eps = j.value("eps", s.eps);
        s.alpha = j.value("alpha", s.alpha);
        s.muon_lr = j.value("muon_lr", s.muon_lr);
        s.muon_momentum = j.value("muon_momentum", s.muon_momentum);
        s.momentum = j.value("momentum", s.momentum);
        s.dampening = j.value("dampening", s.dampening);
        s.soap_refresh = j.value("soap_refresh", s.soap_refresh);
        if (j.contains("ema_decay")) s.ema_decay = j.at("ema_decay").get<double>();
        s.validate();
        return s;
    }
};

/// Step counter plus per-parameter buffers keyed by parameter name, then
/// buffer name. Sorted maps keep serialization deterministic.
template <std::floating_point Real>
struct OptimizerStateT {
    std::int64_t step = 0;
    std::map<std::string, std::map<std::string, TensorT<Real>>> buffers;

    TensorT<Real>& buffer(const std::string& param, const std::string& name,
                          const std::vector<int>& shape) {
        auto& slot = buffers[param][name];
        if (slot.empty()) slot = TensorT<Real>::zeros(shape);
        return slot;
    }

    bool has_buffer(const std::string& param, const std::string& name) const {
        const auto it = buffers.find(param);
        return it != buffers.end() && it->second.count(name) > 0;
    }

    void save(std::ostream& os) const {
        detail::write_header<Real>(os, buffers.size());
        detail::write_pod(os, step);
        for (const auto& [param, bufs] : buffers) {
            detail::write_string(os, param);
            detail::write_pod(os, static_cast<std::uint32_t>(bufs.size()));
            for (const auto& [name, tensor] : bufs) {
                detail::write_string(os, name);
                detail::write_tensor(os, tensor);
            }
        }
        if (!os) throw IoError("optimizer state write failed");
    }

    static OptimizerStateT load(std::istream& is) {
        OptimizerStateT state;
        const auto n_params = detail::read_header<Real>(is);
        state.step = detail::read_pod<std::int64_t>(is);
        for (std::uint64_t i = 0; i < n_params; ++i) {
            const std::string param = detail::read_string(is);
            const auto n_bufs = detail::read_pod<std::uint32_t>(is);
            for (std::uint32_t b = 0; b < n_bufs; ++b) {
                const std::string name = detail::read_string(is);
                state.buffers[param][name] = detail::read_tensor<Real>(is);
            }
        }
        return state;
    }
};

namespace detail {

template <std::floating_point Real>
void decoupled_decay(TensorT<Real>& theta, double lr, double wd) {
    if (wd == 0.0) return;
    scale_inplace(theta, static_cast<Real>(1.0 - lr * wd));
}

template <std::floating_point Real>
Real sign_of(Real v) {
    return v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0));
}

}  // namespace detail

/// One optimizer instance owns the state for one training run. step() applies
/// exactly one update; eval_params() exposes the averaged iterate for rules
/// that evaluate on something other than the live parameters.
template <std::floating_point Real>
class OptimizerT {
public:
    explicit OptimizerT(OptimizerSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const OptimizerSpec& spec() const { return spec_; }
    OptimizerStateT<Real>& state() { return state_; }
    const OptimizerStateT<Real>& state() const { return state_; }

    void step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        params.check_grads(grads);
        for (const auto& [name, g] : grads)
            if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);

        switch (spec_.rule) {
            case OptRule::adamw: adam_family(params, grads, Variant::adamw); break;
            case OptRule::nadamw: adam_family(params, grads, Variant::nadamw); break;
            case OptRule::radam: adam_family(params, grads, Variant::radam); break;
            case OptRule::adabelief: adam_family(params, grads, Variant::adabelief); break;
            case OptRule::cautious_adamw: adam_family(params, grads, Variant::cautious); break;
            case OptRule::ademamix: adam_family(params, grads, Variant::ademamix); break;
            case OptRule::adopt: adopt_step(params, grads); break;
            case OptRule::adan: adan_step(params, grads); break;
            case OptRule::lion: lion_step(params, grads); break;
            case OptRule::signum: signum_step(params, grads); break;
            case OptRule::sgd: sgd_step(params, grads); break;
            case OptRule::muon: muon_step(params, grads); break;
            case OptRule::soap: soap_step(params, grads); break;
            case OptRule::schedule_free_adamw: schedule_free_step(params, grads); break;
        }
        ++state_.step;

        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params.entry_at(i).value.all_finite())
                throw NumericError("non-finite update for parameter " + params.name_at(i));
    }

    /// Parameters to evaluate and checkpoint. Schedule-Free reports its
    /// averaged iterate; every other rule evaluates the live parameters.
    ParamSetT<Real> eval_params(const ParamSetT<Real>& live) const {
        ParamSetT<Real> out = live;
        if (spec_.rule != OptRule::schedule_free_adamw) return out;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto& name = out.name_at(i);
            if (state_.has_buffer(name, "x"))
                out.entry_at(i).value = state_.buffers.at(name).at("x");
        }
        return out;
    }

private:
    enum class Variant { adamw, nadamw, radam, adabelief, cautious, ademamix };

    // Shared skeleton for the Adam family; variants differ in the second
    // moment and the numerator.
    void adam_family(ParamSetT<Real>& params, const GradSetT<Real>& grads, Variant variant) {
        const auto t = static_cast<double>(state_.step + 1);
        const double bc1 = 1.0 - std::pow(spec_.beta1, t);
        const double bc2 = 1.0 - std::pow(spec_.beta2, t);
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        const auto eps = static_cast<Real>(spec_.eps);
        const auto lr = static_cast<Real>(spec_.lr);

        // RAdam rectification is shared across parameters at a given step.
        double rect = 1.0;
        bool rectified = true;
        if (variant == Variant::radam) {
            const double rho_inf = 2.0 / (1.0 - spec_.beta2) - 1.0;
            const double rho_t =
                rho_inf - 2.0 * t * std::pow(spec_.beta2, t) / (1.0 - std::pow(spec_.beta2, t));
            rectified = rho_t > 4.0;
            if (rectified)
                rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                 ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        }

        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;
            const auto& g = grads.at(name);
            auto& m = state_.buffer(name, "m", theta.shape());
            auto& v = state_.buffer(name, variant == Variant::adabelief ? "s" : "v", theta.shape());

            detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);

            const std::size_t n = theta.size();
            Real* pt = theta.data();
            Real* pm = m.data();
            Real* pv = v.data();
            const Real* pg = g.data();

            Real* pslow = nullptr;
            if (variant == Variant::ademamix) {
                auto& slow = state_.buffer(name, "slow", theta.shape());
                pslow = slow.data();
            }

            // Cautious masking needs the whole tensor's mask count first.
            std::vector<Real> updates;
            if (variant == Variant::cautious) updates.resize(n);

            for (std::size_t idx = 0; idx < n; ++idx) {
                const Real gi = pg[idx];
                pm[idx] = b1 * pm[idx] + (Real(1) - b1) * gi;
                if (variant == Variant::adabelief) {
                    const Real diff = gi - pm[idx];
                    pv[idx] = b2 * pv[idx] + (Real(1) - b2) * diff * diff + eps;
                } else {
                    pv[idx] = b2 * pv[idx] + (Real(1) - b2) * gi * gi;
                }
                const Real m_hat = pm[idx] / static_cast<Real>(bc1);
                const Real v_hat = pv[idx] / static_cast<Real>(bc2);

                Real numerator;
                switch (variant) {
                    case Variant::nadamw:
                        numerator = b1 * m_hat + (Real(1) - b1) * gi / static_cast<Real>(bc1);
                        break;
                    case Variant::ademamix: {
                        pslow[idx] = static_cast<Real>(spec_.beta3) * pslow[idx] +
                                     (Real(1) - static_cast<Real>(spec_.beta3)) * gi;
                        numerator = m_hat + static_cast<Real>(spec_.alpha) * pslow[idx];
                        break;
                    }
                    default:
                        numerator = m_hat;
                }

                Real u;
                if (variant == Variant::radam && !rectified) {
                    u = numerator;  // momentum-only step, no variance normalization
                } else {
                    u = static_cast<Real>(rect) * numerator / (std::sqrt(v_hat) + eps);
                }

                if (variant == Variant::cautious) {
                    updates[idx] = u;
                } else {
                    pt[idx] -= lr * u;
                }
            }

            if (variant == Variant::cautious) {
                std::size_t kept = 0;
                for (std::size_t idx = 0; idx < n; ++idx)
                    if (updates[idx] * pg[idx] > Real(0)) ++kept;
                if (kept > 0) {
                    const Real rescale = static_cast<Real>(n) / static_cast<Real>(kept);
                    for (std::size_t idx = 0; idx < n; ++idx)
                        if (updates[idx] * pg[idx] > Real(0)) pt[idx] -= lr * updates[idx] * rescale;
                }
            }
        }
    }

    // Second moment lags one step; the normalized gradient feeds momentum.
    // The first gradient only initializes the second moment.
    void adopt_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto eps = static_cast<Real>(spec_.eps);
        const auto lr = static_cast<Real>(spec_.lr);
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;
            const auto& g = grads.at(name);
            auto& m = state_.buffer(name, "m", theta.shape());
            auto& v = state_.buffer(name, "v", theta.shape());
            Real* pt = theta.data();
            Real* pm = m.data();
            Real* pv = v.data();
            const Real* pg = g.data();
            if (state_.step == 0) {
                for (std::size_t idx = 0; idx < theta.size(); ++idx) pv[idx] = pg[idx] * pg[idx];
                continue;
            }
            detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                const Real gi = pg[idx];
                const Real normed = gi / std::max(std::sqrt(pv[idx]), eps);
                pm[idx] = b1 * pm[idx] + (Real(1) - b1) * normed;
                pt[idx] -= lr * pm[idx];
                pv[idx] = b2 * pv[idx] + (Real(1) - b2) * gi * gi;
            }
        }
    }

    // Three EMAs: gradient, gradient difference, squared lookahead gradient.
    // Decay enters through the (1 + lr wd) divisor.
    void adan_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto t = static_cast<double>(state_.step + 1);
        const double bc1 = 1.0 - std::pow(spec_.beta1, t);
        const double bc2 = 1.0 - std::pow(spec_.beta2, t);
        const double bc3 = 1.0 - std::pow(spec_.beta3, t);
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        const auto b3 = static_cast<Real>(spec_.beta3);
        const auto eps = static_cast<Real>(spec_.eps);
        const auto lr = static_cast<Real>(spec_.lr);
        const auto decay_div = static_cast<Real>(1.0 + spec_.lr * spec_.weight_decay);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;
            const auto& g = grads.at(name);
            auto& m = state_.buffer(name, "m", theta.shape());
            auto& d = state_.buffer(name, "d", theta.shape());
            auto& nbuf = state_.buffer(name, "n", theta.shape());
            auto& gprev = state_.buffer(name, "gprev", theta.shape());
            const bool first = state_.step == 0;
            Real* pt = theta.data();
            Real* pm = m.data();
            Real* pd = d.data();
            Real* pn = nbuf.data();
            Real* pp = gprev.data();
            const Real* pg = g.data();
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                const Real gi = pg[idx];
                const Real diff = first ? Real(0) : gi - pp[idx];
                pm[idx] = b1 * pm[idx] + (Real(1) - b1) * gi;
                pd[idx] = b2 * pd[idx] + (Real(1) - b2) * diff;
                const Real look = gi + b2 * diff;
                pn[idx] = b3 * pn[idx] + (Real(1) - b3) * look * look;
                const Real denom = std::sqrt(pn[idx] / static_cast<Real>(bc3)) + eps;
                const Real update = (pm[idx] / static_cast<Real>(bc1) +
                                     b2 * pd[idx] / static_cast<Real>(bc2)) /
                                    denom;
                pt[idx] = (pt[idx] - lr * update) / decay_div;
                pp[idx] = gi;
            }
        }
    }

    void lion_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        const auto lr = static_cast<Real>(spec_.lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;
            const auto& g = grads.at(name);
            auto& m = state_.buffer(name, "m", theta.shape());
            detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);
            Real* pt = theta.data();
            Real* pm = m.data();
            const Real* pg = g.data();
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                const Real c = b1 * pm[idx] + (Real(1) - b1) * pg[idx];
                pt[idx] -= lr * detail::sign_of(c);
                pm[idx] = b2 * pm[idx] + (Real(1) - b2) * pg[idx];
            }
        }
    }

    void signum_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto lr = static_cast<Real>(spec_.lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;
            const auto& g = grads.at(name);
            auto& m = state_.buffer(name, "m", theta.shape());
            detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);
            Real* pt = theta.data();
            Real* pm = m.data();
            const Real* pg = g.data();
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                pm[idx] = b1 * pm[idx] + (Real(1) - b1) * pg[idx];
                pt[idx] -= lr * detail::sign_of(pm[idx]);
            }
        }
    }

    // Classic momentum SGD with the L2 term folded into the gradient.
    // The buffer seeds from the first gradient, damping applies afterwards.
    void sgd_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto mu = static_cast<Real>(spec_.momentum);
        const auto damp = static_cast<Real>(spec_.dampening);
        const auto lr = static_cast<Real>(spec_.lr);
        const auto wd = static_cast<Real>(spec_.weight_decay);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;
            const auto& g = grads.at(name);
            auto& buf = state_.buffer(name, "buf", theta.shape());
            const bool first = state_.step == 0;
            Real* pt = theta.data();
            Real* pb = buf.data();
            const Real* pg = g.data();
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                const Real gi = pg[idx] + wd * pt[idx];
                pb[idx] = first ? gi : mu * pb[idx] + (Real(1) - damp) * gi;
                pt[idx] -= lr * pb[idx];
            }
        }
    }

    // Hidden matrix parameters take orthogonalized momentum scaled by
    // muon_lr * sqrt(max(1, rows/cols)); everything else runs AdamW.
    void muon_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto t = static_cast<double>(state_.step + 1);
        const double bc1 = 1.0 - std::pow(spec_.beta1, t);
        const double bc2 = 1.0 - std::pow(spec_.beta2, t);
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        const auto eps = static_cast<Real>(spec_.eps);
        const auto mu = static_cast<Real>(spec_.muon_momentum);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& entry = params.entry_at(i);
            auto& theta = entry.value;
            const auto& g = grads.at(name);
            if (entry.muon_group && entry.role == ParamRole::matrix) {
                auto& m = state_.buffer(name, "momentum", theta.shape());
                Real* pm = m.data();
                const Real* pg = g.data();
                for (std::size_t idx = 0; idx < m.size(); ++idx)
                    pm[idx] = mu * pm[idx] + pg[idx];
                const TensorT<Real> ortho = newton_schulz_orthogonalize(m);
                const double shape_scale =
                    std::sqrt(std::max(1.0, static_cast<double>(theta.rows()) /
                                                static_cast<double>(theta.cols())));
                detail::decoupled_decay(theta, spec_.muon_lr, spec_.weight_decay);
                axpy_inplace(theta, static_cast<Real>(-spec_.muon_lr * shape_scale), ortho);
            } else {
                auto& m = state_.buffer(name, "m", theta.shape());
                auto& v = state_.buffer(name, "v", theta.shape());
                detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);
                Real* pt = theta.data();
                Real* pm = m.data();
                Real* pv = v.data();
                const Real* pg = g.data();
                for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                    const Real gi = pg[idx];
                    pm[idx] = b1 * pm[idx] + (Real(1) - b1) * gi;
                    pv[idx] = b2 * pv[idx] + (Real(1) - b2) * gi * gi;
                    const Real m_hat = pm[idx] / static_cast<Real>(bc1);
                    const Real v_hat = pv[idx] / static_cast<Real>(bc2);
                    pt[idx] -= static_cast<Real>(spec_.lr) * m_hat / (std::sqrt(v_hat) + eps);
                }
            }
        }
    }

    // Shampoo-style Kronecker accumulators with Adam moments kept in the
    // rotated basis. The eigenbasis refreshes every soap_refresh steps; a
    // failed eigensolve keeps the previous basis.
    void soap_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto t = static_cast<double>(state_.step + 1);
        const double bc1 = 1.0 - std::pow(spec_.beta1, t);
        const double bc2 = 1.0 - std::pow(spec_.beta2, t);
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        const auto eps = static_cast<Real>(spec_.eps);
        const auto lr = static_cast<Real>(spec_.lr);
        const bool refresh = state_.step > 0 && state_.step % spec_.soap_refresh == 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& entry = params.entry_at(i);
            auto& theta = entry.value;
            const auto& g = grads.at(name);
            if (entry.role != ParamRole::matrix) {
                // AdamW fallback for vectors and embeddings.
                auto& m = state_.buffer(name, "m", theta.shape());
                auto& v = state_.buffer(name, "v", theta.shape());
                detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);
                Real* pt = theta.data();
                Real* pm = m.data();
                Real* pv = v.data();
                const Real* pg = g.data();
                for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                    const Real gi = pg[idx];
                    pm[idx] = b1 * pm[idx] + (Real(1) - b1) * gi;
                    pv[idx] = b2 * pv[idx] + (Real(1) - b2) * gi * gi;
                    pt[idx] -= lr * (pm[idx] / static_cast<Real>(bc1)) /
                               (std::sqrt(pv[idx] / static_cast<Real>(bc2)) + eps);
                }
                continue;
            }

            const int r = theta.rows(), c = theta.cols();
            auto& lacc = state_.buffer(name, "L", {r, r});
            auto& racc = state_.buffer(name, "R", {c, c});
            auto& ql = state_.buffer(name, "QL", {r, r});
            auto& qr = state_.buffer(name, "QR", {c, c});
            if (state_.step == 0) {
                for (int d = 0; d < r; ++d) ql(d, d) = Real(1);
                for (int d = 0; d < c; ++d) qr(d, d) = Real(1);
            }

            // L <- beta2 L + G G^T,  R <- beta2 R + G^T G
            {
                TensorT<Real> ggt = matmul_nt(g, g);
                TensorT<Real> gtg = matmul_tn(g, g);
                scale_inplace(lacc, b2);
                add_inplace(lacc, ggt);
                scale_inplace(racc, b2);
                add_inplace(racc, gtg);
            }

            if (refresh) {
                TensorT<Real> q_new;
                std::vector<Real> evals;
                if (jacobi_eigh(lacc, q_new, evals)) ql = q_new;
                if (jacobi_eigh(racc, q_new, evals)) qr = q_new;
            }

            TensorT<Real> g_rot = matmul(matmul_tn(ql, g), qr);
            auto& m = state_.buffer(name, "m", theta.shape());
            auto& v = state_.buffer(name, "v", theta.shape());
            TensorT<Real> u_rot = TensorT<Real>::zeros(theta.shape());
            Real* pm = m.data();
            Real* pv = v.data();
            Real* pu = u_rot.data();
            const Real* pgr = g_rot.data();
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                const Real gi = pgr[idx];
                pm[idx] = b1 * pm[idx] + (Real(1) - b1) * gi;
                pv[idx] = b2 * pv[idx] + (Real(1) - b2) * gi * gi;
                pu[idx] = (pm[idx] / static_cast<Real>(bc1)) /
                          (std::sqrt(pv[idx] / static_cast<Real>(bc2)) + eps);
            }
            TensorT<Real> update = matmul_nt(matmul(ql, u_rot), qr);
            detail::decoupled_decay(theta, spec_.lr, spec_.weight_decay);
            axpy_inplace(theta, -lr, update);
        }
    }

    // Base iterate z takes normalized-gradient steps; the running average x
    // is what gets evaluated; gradients are expected at the interpolated
    // point y = (1-beta1) z + beta1 x, which is what the live params hold.
    void schedule_free_step(ParamSetT<Real>& params, const GradSetT<Real>& grads) {
        const auto t_new = static_cast<double>(state_.step + 1);
        const double bc2 = 1.0 - std::pow(spec_.beta2, t_new);
        const auto b1 = static_cast<Real>(spec_.beta1);
        const auto b2 = static_cast<Real>(spec_.beta2);
        const auto eps = static_cast<Real>(spec_.eps);
        const auto lr = static_cast<Real>(spec_.lr);
        const auto wd = static_cast<Real>(spec_.weight_decay);
        const auto c = static_cast<Real>(1.0 / t_new);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            auto& theta = params.entry_at(i).value;  // y iterate
            const auto& g = grads.at(name);
            const bool fresh = !state_.has_buffer(name, "z");
            auto& z = state_.buffer(name, "z", theta.shape());
            auto& x = state_.buffer(name, "x", theta.shape());
            auto& v = state_.buffer(name, "v", theta.shape());
            if (fresh) {
                z = theta;
                x = theta;
            }
            Real* pz = z.data();
            Real* px = x.data();
            Real* pv = v.data();
            Real* py = theta.data();
            const Real* pg = g.data();
            for (std::size_t idx = 0; idx < theta.size(); ++idx) {
                const Real gi = pg[idx];
                pv[idx] = b2 * pv[idx] + (Real(1) - b2) * gi * gi;
                const Real denom = std::sqrt(pv[idx] / static_cast<Real>(bc2)) + eps;
                pz[idx] -= lr * (gi / denom + wd * py[idx]);
                px[idx] = (Real(1) - c) * px[idx] + c * pz[idx];
                py[idx] = (Real(1) - b1) * pz[idx] + b1 * px[idx];
            }
        }
    }

    OptimizerSpec spec_;
    OptimizerStateT<Real> state_;
};

using Optimizer = OptimizerT<double>;

}  // namespace tabopt
