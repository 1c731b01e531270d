// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

// Every pinned numeric default lives here so run records can echo them verbatim.

namespace tabopt::constants {

// Adam-family defaults.
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;
inline constexpr double kAdoptEps = 1e-6;

// Sign-based rules.
inline constexpr double kLionBeta1 = 0.9;
inline constexpr double kLionBeta2 = 0.99;
inline constexpr double kSignumBeta = 0.9;

// Adan uses its own EMA triple.
inline constexpr double kAdanBeta1 = 0.98;
inline constexpr double kAdanBeta2 = 0.92;
inline constexpr double kAdanBeta3 = 0.99;

// AdEMAMix slow EMA.
inline constexpr double kAdemamixBeta3 = 0.9999;
inline constexpr double kAdemamixAlpha = 5.0;

// SGD with momentum.
inline constexpr double kSgdMomentum = 0.9;
inline constexpr double kSgdDampening = 0.9;

// Muon.
inline constexpr double kMuonMomentum = 0.95;
inline constexpr int kNewtonSchulzIters = 5;
inline constexpr double kNewtonSchulzA = 3.4445;
inline constexpr double kNewtonSchulzB = -4.7750;
inline constexpr double kNewtonSchulzC = 2.0315;
// The quintic alone leaves singular values cycling in about [0.68, 1.13];
// a few cubic polish steps contract them onto 1.
inline constexpr int kNewtonSchulzPolishIters = 4;

// SOAP.
inline constexpr int kSoapRefreshPeriod = 10;

// Training protocol.
inline constexpr int kPatience = 16;
inline constexpr double kClipThreshold = 1.0;
inline constexpr int kMaxEpochs = 1000;

// Preprocessing.
inline constexpr double kQuantileJitterEps = 1e-3;
inline constexpr int kQuantileMaxRefs = 1000;

// TPE sampler.
inline constexpr int kTpeStartupTrials = 10;
inline constexpr double kTpeGamma = 0.25;
inline constexpr int kTpeCandidates = 24;
inline constexpr double kZeroBranchPrior = 0.5;

// Statistics.
inline constexpr double kWelchAlpha = 0.05;

// Ensembles.
inline constexpr int kTabmK = 16;

/// Snapshot of every pinned constant, embedded into each run record.
inline nlohmann::json as_json() {
    return nlohmann::json{
        {"adam_beta1", kAdamBeta1},
        {"adam_beta2", kAdamBeta2},
        {"adam_eps", kAdamEps},
        {"adopt_eps", kAdoptEps},
        {"lion_beta1", kLionBeta1},
        {"lion_beta2", kLionBeta2},
        {"signum_beta", kSignumBeta},
        {"adan_beta1", kAdanBeta1},
        {"adan_beta2", kAdanBeta2},
        {"adan_beta3", kAdanBeta3},
        {"ademamix_beta3", kAdemamixBeta3},
        {"ademamix_alpha_default", kAdemamixAlpha},
        {"sgd_momentum", kSgdMomentum},
        {"sgd_dampening", kSgdDampening},
        {"muon_momentum", kMuonMomentum},
        {"newton_schulz_iters", kNewtonSchulzIters},
        {"newton_schulz_coeffs", {kNewtonSchulzA, kNewtonSchulzB, kNewtonSchulzC}},
        {"soap_refresh_period", kSoapRefreshPeriod},
        {"patience", kPatience},
        {"clip_threshold", kClipThreshold},
        {"max_epochs", kMaxEpochs},
        {"quantile_jitter_eps", kQuantileJitterEps},
        {"quantile_max_refs", kQuantileMaxRefs},
        {"tpe_startup_trials", kTpeStartupTrials},
        {"tpe_gamma", kTpeGamma},
        {"tpe_candidates", kTpeCandidates},
        {"zero_branch_prior", kZeroBranchPrior},
        {"welch_alpha", kWelchAlpha},
        {"tabm_k", kTabmK},
    };
}

}  // namespace tabopt::constants
