// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>
#include <cstdint>

#include "tabopt/params.hpp"

namespace tabopt {

/// Exponential moving average of model weights. The shadow copy starts at the
/// initial parameters (no bias correction), is updated once per optimizer
/// step, and never touches the live training parameters. Evaluation and
/// early stopping read the shadow when EMA is enabled.
template <std::floating_point Real>
class EmaTrackerT {
public:
    EmaTrackerT(double decay, const ParamSetT<Real>& initial) : decay_(decay) {
        if (decay <= 0.0 || decay >= 1.0) throw ConfigError("ema decay must be in (0, 1)");
        for (std::size_t i = 0; i < initial.size(); ++i)
            shadow_.add(initial.name_at(i), initial.entry_at(i).value);
    }

    double decay() const { return decay_; }
    std::int64_t update_count() const { return update_count_; }

    /// shadow <- decay * shadow + (1 - decay) * params
    void update(const ParamSetT<Real>& params) {
        if (params.size() != shadow_.size()) throw ConfigError("ema: parameter set drifted");
        const auto d = static_cast<Real>(decay_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& name = params.name_at(i);
            const auto& live = params.entry_at(i).value;
            auto& sh = shadow_.at(name);
            if (!sh.same_shape(live)) throw ConfigError("ema: shape drift for " + name);
            Real* ps = sh.data();
            const Real* pl = live.data();
            for (std::size_t idx = 0; idx < sh.size(); ++idx)
                ps[idx] = d * ps[idx] + (Real(1) - d) * pl[idx];
        }
        ++update_count_;
    }

    /// Shadow weights shaped like the live set (roles copied from it).
    ParamSetT<Real> eval_params(const ParamSetT<Real>& live) const {
        ParamSetT<Real> out = live;
        for (std::size_t i = 0; i < out.size(); ++i)
            out.entry_at(i).value = shadow_.at(out.name_at(i));
        return out;
    }

    const NamedTensorsT<Real>& shadow() const { return shadow_; }

    void save(std::ostream& os) const {
        detail::write_header<Real>(os, shadow_.size());
        detail::write_pod(os, decay_);
        detail::write_pod(os, update_count_);
        for (const auto& [name, t] : shadow_) {
            detail::write_string(os, name);
            detail::write_tensor(os, t);
        }
    }

    static EmaTrackerT load(std::istream& is, const ParamSetT<Real>& live) {
        const auto count = detail::read_header<Real>(is);
        const auto decay = detail::read_pod<double>(is);
        const auto updates = detail::read_pod<std::int64_t>(is);
        EmaTrackerT tracker(decay, live);
        tracker.update_count_ = updates;
        tracker.shadow_ = {};
        for (std::uint64_t i = 0; i < count; ++i) {
            std::string name = detail::read_string(is);
            tracker.shadow_.add(std::move(name), detail::read_tensor<Real>(is));
        }
        return tracker;
    }

private:
    double decay_;
    NamedTensorsT<Real> shadow_;
    std::int64_t update_count_ = 0;
};

using EmaTracker = EmaTrackerT<double>;

}  // namespace tabopt
