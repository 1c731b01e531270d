// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabopt/constants.hpp"
#include "tabopt/data.hpp"
#include "tabopt/nn.hpp"
#include "tabopt/params.hpp"
#include "tabopt/rng.hpp"

namespace tabopt {

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

struct MLPConfig {
    int n_layers = 2;
    int width = 64;
    double dropout = 0.0;
    int in_dim = 0;
    int out_dim = 0;

    void validate() const {
        if (n_layers < 1) throw ConfigError("MLP needs at least one hidden block");
        if (width < 1 || in_dim < 1 || out_dim < 1) throw ConfigError("MLP dims must be positive");
        if (dropout < 0.0 || dropout > 0.5) throw ConfigError("dropout must be in [0, 0.5]");
    }
};

/// Piecewise-linear embedding of numeric features. Bin edges come from
/// empirical quantiles of the raw train values; duplicate edges are merged
/// and a feature that ends up with fewer than two bins passes through raw.
struct PLEConfig {
    int n_bins = 16;
    int d_embedding = 8;
    std::vector<std::vector<double>> edges;  // per feature, strictly increasing

    int bins_for(int feature) const {
        const auto& e = edges[static_cast<std::size_t>(feature)];
        return std::max(static_cast<int>(e.size()) - 1, 0);
    }
    bool passthrough(int feature) const { return bins_for(feature) < 2; }
};

struct TabMPackedConfig {
    int k = constants::kTabmK;
    MLPConfig inner;

    void validate() const {
        if (k < 1) throw ConfigError("ensemble size k must be >= 1");
        inner.validate();
    }
};

// ---------------------------------------------------------------------------
// Plain MLP
// ---------------------------------------------------------------------------

/// Build MLP parameters: n_layers blocks of (linear, relu, dropout) plus a
/// linear head. Weights and biases start at uniform(-1/sqrt(fan_in), +1/..).
/// Only hidden-to-hidden weights join the Muon matrix group; the input-layer
/// weight, the head weight, and all biases take the elementwise rule.
template <std::floating_point Real>
ParamSetT<Real> build_mlp(const MLPConfig& cfg, const Rng& rng, const std::string& prefix = "") {
    cfg.validate();
    ParamSetT<Real> params;
    auto init_tensor = [&](const std::string& name, std::vector<int> shape, int fan_in) {
        Rng stream = rng.split(name);
        auto t = TensorT<Real>::zeros(std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Real& v : t.values()) v = static_cast<Real>(stream.uniform(-bound, bound));
        return t;
    };
    int in = cfg.in_dim;
    for (int layer = 1; layer <= cfg.n_layers; ++layer) {
        const std::string base = prefix + "block" + std::to_string(layer) + ".linear.";
        const bool muon = layer > 1;  // input-layer weight stays in the Adam group
        params.add(base + "weight", init_tensor(base + "weight", {in, cfg.width}, in),
                   ParamRole::matrix, muon);
        params.add(base + "bias", init_tensor(base + "bias", {cfg.width}, in), ParamRole::vector);
        in = cfg.width;
    }
    params.add(prefix + "head.weight", init_tensor(prefix + "head.weight", {in, cfg.out_dim}, in),
               ParamRole::matrix, /*muon_group=*/false);
    params.add(prefix + "head.bias", init_tensor(prefix + "head.bias", {cfg.out_dim}, in),
               ParamRole::vector);
    return params;
}

template <std::floating_point Real>
struct MlpCache {
    TensorT<Real> input;
    std::vector<TensorT<Real>> pre;               // pre-activations per block
    std::vector<TensorT<Real>> act;               // post-dropout activations per block
    std::vector<std::vector<std::uint8_t>> mask;  // dropout masks per block
    bool valid = false;
};

template <std::floating_point Real>
TensorT<Real> mlp_forward(const ParamSetT<Real>& params, const MLPConfig& cfg,
                          const TensorT<Real>& x, bool training, Rng& dropout_rng,
                          MlpCache<Real>* cache = nullptr, const std::string& prefix = "") {
    if (x.cols() != cfg.in_dim) throw ConfigError("mlp_forward: input width mismatch");
    if (cache) {
        *cache = {};
        cache->input = x;
    }
    TensorT<Real> h = x;
    for (int layer = 1; layer <= cfg.n_layers; ++layer) {
        const std::string base = prefix + "block" + std::to_string(layer) + ".linear.";
        TensorT<Real> pre = linear_forward(h, params.at(base + "weight"), params.at(base + "bias"));
        TensorT<Real> activated = relu(pre);
        std::vector<std::uint8_t> mask;
        h = dropout(activated, cfg.dropout, training, dropout_rng, cache ? &mask : nullptr);
        if (cache) {
            cache->pre.push_back(std::move(pre));
            cache->act.push_back(h);
            cache->mask.push_back(std::move(mask));
        }
    }
    TensorT<Real> logits =
        linear_forward(h, params.at(prefix + "head.weight"), params.at(prefix + "head.bias"));
    ensure_finite(logits, "mlp_forward output");
    if (cache) cache->valid = true;
    return logits;
}

/// Backward through the MLP given the forward cache; accumulates into grads.
template <std::floating_point Real>
void mlp_backward(const ParamSetT<Real>& params, const MLPConfig& cfg, const MlpCache<Real>& cache,
                  const TensorT<Real>& dlogits, GradSetT<Real>& grads,
                  const std::string& prefix = "", TensorT<Real>* dinput = nullptr) {
    if (!cache.valid) throw ConfigError("mlp_backward called before forward");
    const TensorT<Real>& last_act = cfg.n_layers > 0 ? cache.act.back() : cache.input;
    TensorT<Real> dw, db;
    TensorT<Real> dh = linear_backward(last_act, params.at(prefix + "head.weight"), dlogits, dw, db);
    add_inplace(grads.at(prefix + "head.weight"), dw);
    add_inplace(grads.at(prefix + "head.bias"), db);
    for (int layer = cfg.n_layers; layer >= 1; --layer) {
        const auto li = static_cast<std::size_t>(layer - 1);
        const std::string base = prefix + "block" + std::to_string(layer) + ".linear.";
        TensorT<Real> dact = dropout_backward(cache.mask[li], cfg.dropout, dh);
        TensorT<Real> dpre = relu_backward(cache.pre[li], dact);
        const TensorT<Real>& layer_in = layer == 1 ? cache.input : cache.act[li - 1];
        dh = linear_backward(layer_in, params.at(base + "weight"), dpre, dw, db);
        add_inplace(grads.at(base + "weight"), dw);
        add_inplace(grads.at(base + "bias"), db);
    }
    if (dinput) *dinput = std::move(dh);
}

// ---------------------------------------------------------------------------
// Piecewise-linear encoding
// ---------------------------------------------------------------------------

/// Quantile bin edges for each feature column of the raw train matrix.
/// Duplicates collapse, so a heavily repeated value cannot produce an empty bin.
inline std::vector<std::vector<double>> fit_ple_edges(const Matrix& train_raw_num, int n_bins) {
    if (n_bins < 2 || n_bins > 128) throw ConfigError("n_bins must be in [2, 128]");
    std::vector<std::vector<double>> edges;
    const int rows = train_raw_num.rows();
    for (int f = 0; f < train_raw_num.cols(); ++f) {
        std::vector<double> vals(static_cast<std::size_t>(rows));
        for (int r = 0; r < rows; ++r) vals[static_cast<std::size_t>(r)] = train_raw_num(r, f);
        std::sort(vals.begin(), vals.end());
        std::vector<double> e;
        for (int b = 0; b <= n_bins; ++b) {
            const double pos = static_cast<double>(b) * static_cast<double>(rows - 1) /
                               static_cast<double>(n_bins);
            const auto lo = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(lo);
            const double q = lo + 1 < vals.size()
                                 ? vals[lo] * (1.0 - frac) + vals[lo + 1] * frac
                                 : vals[lo];
            if (e.empty() || q > e.back()) e.push_back(q);
        }
        edges.push_back(std::move(e));
    }
    return edges;
}

/// Encode x[B x F] into [B x F x n_bins]: component t is
/// clamp((x - b_t) / (b_{t+1} - b_t), 0, 1). Values outside the outer edges
/// saturate to all-zeros / all-ones. Features with fewer than two bins get
/// the raw value in channel 0 (passthrough), remaining channels zero.
template <std::floating_point Real>
TensorT<Real> ple_encode(const TensorT<Real>& x_num, const PLEConfig& cfg) {
    if (x_num.rank() != 2) throw ConfigError("ple_encode: rank-2 input required");
    const int b_rows = x_num.rows(), f_cols = x_num.cols();
    if (static_cast<int>(cfg.edges.size()) != f_cols)
        throw ConfigError("ple_encode: edges not fitted for this feature count");
    TensorT<Real> out = TensorT<Real>::zeros({b_rows, f_cols, cfg.n_bins});
    for (int f = 0; f < f_cols; ++f) {
        const auto& e = cfg.edges[static_cast<std::size_t>(f)];
        const int bins = cfg.bins_for(f);
        for (int r = 0; r < b_rows; ++r) {
            const Real x = x_num(r, f);
            if (bins < 2) {
                out(r, f, 0) = x;  // passthrough
                continue;
            }
            for (int t = 0; t < bins; ++t) {
                const Real lo = static_cast<Real>(e[static_cast<std::size_t>(t)]);
                const Real hi = static_cast<Real>(e[static_cast<std::size_t>(t) + 1]);
                const Real v = (x - lo) / (hi - lo);
                out(r, f, t) = std::clamp(v, Real(0), Real(1));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model wrapper used by the trainer
// ---------------------------------------------------------------------------

enum class ModelKind { mlp, mlp_ple, tabm_packed };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "mlp") return ModelKind::mlp;
    if (s == "mlp_ple" || s == "mlp+") return ModelKind::mlp_ple;
    if (s == "tabm_packed") return ModelKind::tabm_packed;
    throw ConfigError("unknown model kind: " + s);
}

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::mlp: return "mlp";
        case ModelKind::mlp_ple: return "mlp_ple";
        case ModelKind::tabm_packed: return "tabm_packed";
    }
    return "?";
}

struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    int n_layers = 2;
    int width = 64;
    double dropout = 0.0;
    int d_embedding = 8;   // mlp_ple
    int n_bins = 16;       // mlp_ple
    int k = constants::kTabmK;  // tabm_packed

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", to_string(kind)},
                         {"n_layers", n_layers},
                         {"width", width},
                         {"dropout", dropout}};
        if (kind == ModelKind::mlp_ple) {
            j["d_embedding"] = d_embedding;
            j["n_bins"] = n_bins;
        }
        if (kind == ModelKind::tabm_packed) j["k"] = k;
        return j;
    }

    static ModelSpec from_json(const nlohmann::json& j) {
        ModelSpec s;
        s.kind = parse_model_kind(j.at("kind").get<std::string>());
        s.n_layers = j.value("n_layers", s.n_layers);
        s.width = j.value("width", s.width);
        s.dropout = j.value("dropout", s.dropout);
        s.d_embedding = j.value("d_embedding", s.d_embedding);
        s.n_bins = j.value("n_bins", s.n_bins);
        s.k = j.value("k", s.k);
        return s;
    }
};

/// Shape and task facts a model needs from the dataset.
struct ModelInputInfo {
    TaskType task = TaskType::binclass;
    int out_dim = 0;
    int std_width = 0;  // standard encoding width
    int n_num = 0;      // leading numeric columns in the standard encoding
    const Matrix* train_raw_num = nullptr;  // PLE edge fitting
};

template <std::floating_point Real>
class ModelT {
public:
    static ModelT build(const ModelSpec& spec, const ModelInputInfo& info, std::uint64_t seed) {
        ModelT m;
        m.spec_ = spec;
        m.task_ = info.task;
        m.n_num_ = info.n_num;
        m.tail_width_ = info.std_width - info.n_num;
        const Rng rng = Rng(seed).split("model_init");

        MLPConfig inner;
        inner.n_layers = spec.n_layers;
        inner.width = spec.width;
        inner.dropout = spec.dropout;
        inner.out_dim = info.out_dim;

        switch (spec.kind) {
            case ModelKind::mlp: {
                inner.in_dim = info.std_width;
                m.mlp_cfg_ = inner;
                m.params_ = build_mlp<Real>(inner, rng);
                break;
            }
            case ModelKind::mlp_ple: {
                if (!info.train_raw_num) throw ConfigError("mlp_ple needs train numeric data");
                m.ple_.n_bins = spec.n_bins;
                m.ple_.d_embedding = spec.d_embedding;
                m.ple_.edges = fit_ple_edges(*info.train_raw_num, spec.n_bins);
                m.rebuild_ple_dims();
                inner.in_dim = m.backbone_in_dim_;
                m.mlp_cfg_ = inner;
                m.params_ = build_mlp<Real>(inner, rng);
                if (m.n_num_ > 0) {
                    Rng wrng = rng.split("embed.weight");
                    auto w = TensorT<Real>::zeros({m.n_num_, spec.n_bins, spec.d_embedding});
                    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.n_bins));
                    for (Real& v : w.values()) v = static_cast<Real>(wrng.uniform(-bound, bound));
                    Rng brng = rng.split("embed.bias");
                    auto b = TensorT<Real>::zeros({m.n_num_ * spec.d_embedding});
                    for (Real& v : b.values()) v = static_cast<Real>(brng.uniform(-bound, bound));
                    m.params_.add("embed.weight", std::move(w), ParamRole::embedding);
                    m.params_.add("embed.bias", std::move(b), ParamRole::vector);
                }
                break;
            }
            case ModelKind::tabm_packed: {
                if (spec.k < 1) throw ConfigError("ensemble size k must be >= 1");
                inner.in_dim = info.std_width;
                m.mlp_cfg_ = inner;
                for (int j = 0; j < spec.k; ++j) {
                    const std::string prefix = "member" + std::to_string(j) + ".";
                    auto member = build_mlp<Real>(inner, rng.split(static_cast<std::uint64_t>(j)),
                                                  prefix);
                    for (std::size_t i = 0; i < member.size(); ++i) {
                        const auto& e = member.entry_at(i);
                        m.params_.add(member.name_at(i), e.value, e.role, e.muon_group);
                    }
                }
                break;
            }
        }
        return m;
    }

    const ModelSpec& spec() const { return spec_; }
    ParamSetT<Real>& params() { return params_; }
    const ParamSetT<Real>& params() const { return params_; }
    PLEConfig& ple_config() { return ple_; }
    int backbone_in_dim() const { return mlp_cfg_.in_dim; }

    /// Deterministic eval-mode prediction: class probabilities for
    /// classification (ensemble members averaged in probability space),
    /// raw normalized output for regression.
    TensorT<Real> predict(const EncodedSplit& split) const { return predict_with(split, params_); }

    /// Same, but evaluated at an explicit weight set (EMA shadow, averaged
    /// iterate, or a restored checkpoint).
    TensorT<Real> predict_with(const EncodedSplit& split, const ParamSetT<Real>& weights) const {
        Rng no_dropout(0);
        MlpCache<Real>* no_cache = nullptr;
        if (spec_.kind == ModelKind::tabm_packed) {
            TensorT<Real> acc;
            const TensorT<Real> x = assemble_input(split, nullptr, 0, split.rows);
            for (int j = 0; j < spec_.k; ++j) {
                TensorT<Real> logits = mlp_forward(weights, mlp_cfg_, x, false, no_dropout, no_cache,
                                                   "member" + std::to_string(j) + ".");
                TensorT<Real> member = task_ == TaskType::regression ? logits : softmax(logits);
                if (j == 0) acc = std::move(member);
                else add_inplace(acc, member);
            }
            scale_inplace(acc, Real(1) / Real(spec_.k));
            return acc;
        }
        TensorT<Real> x = spec_.kind == ModelKind::mlp_ple
                              ? assemble_ple_input_with(split, nullptr, nullptr, weights)
                              : assemble_input(split, nullptr, 0, split.rows);
        TensorT<Real> logits = mlp_forward(weights, mlp_cfg_, x, false, no_dropout);
        return task_ == TaskType::regression ? logits : softmax(logits);
    }

    /// One training step's forward/backward over the given rows.
    /// Returns the batch loss and fills grads (keyed like params).
    Real train_batch(const EncodedSplit& split, const std::vector<int>& rows, Rng& dropout_rng,
                     GradSetT<Real>& grads) const {
        const int bsz = static_cast<int>(rows.size());

        std::vector<int> y_class;
        TensorT<Real> y_reg;
        if (task_ == TaskType::regression) {
            y_reg = TensorT<Real>::zeros({bsz, 1});
            for (int i = 0; i < bsz; ++i)
                y_reg(i, 0) = static_cast<Real>(split.y_norm[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])]);
        } else {
            y_class.reserve(static_cast<std::size_t>(bsz));
            for (const int r : rows) y_class.push_back(split.y_class[static_cast<std::size_t>(r)]);
        }

        if (spec_.kind == ModelKind::tabm_packed) {
            const TensorT<Real> x = assemble_input(split, &rows, 0, bsz);
            Real total = 0;
            const Real inv_k = Real(1) / Real(spec_.k);
            for (int j = 0; j < spec_.k; ++j) {
                const std::string prefix = "member" + std::to_string(j) + ".";
                MlpCache<Real> cache;
                TensorT<Real> logits =
                    mlp_forward(params_, mlp_cfg_, x, true, dropout_rng, &cache, prefix);
                TensorT<Real> dlogits;
                const Real loss = task_ == TaskType::regression
                                      ? mse_with_grad(logits, y_reg, dlogits)
                                      : cross_entropy_with_grad(logits, y_class, dlogits);
                scale_inplace(dlogits, inv_k);
                mlp_backward(params_, mlp_cfg_, cache, dlogits, grads, prefix);
                total += loss * inv_k;
            }
            return total;
        }

        if (spec_.kind == ModelKind::mlp_ple) {
            PleCache cache;
            TensorT<Real> input = assemble_ple_input(split, &rows, &cache);
            MlpCache<Real> mlp_cache;
            TensorT<Real> logits = mlp_forward(params_, mlp_cfg_, input, true, dropout_rng, &mlp_cache);
            TensorT<Real> dlogits;
            const Real loss = task_ == TaskType::regression
                                  ? mse_with_grad(logits, y_reg, dlogits)
                                  : cross_entropy_with_grad(logits, y_class, dlogits);
            TensorT<Real> dinput;
            mlp_backward(params_, mlp_cfg_, mlp_cache, dlogits, grads, "", &dinput);
            ple_backward(cache, dinput, grads);
            return loss;
        }

        const TensorT<Real> x = assemble_input(split, &rows, 0, bsz);
        MlpCache<Real> cache;
        TensorT<Real> logits = mlp_forward(params_, mlp_cfg_, x, true, dropout_rng, &cache);
        TensorT<Real> dlogits;
        const Real loss = task_ == TaskType::regression
                              ? mse_with_grad(logits, y_reg, dlogits)
                              : cross_entropy_with_grad(logits, y_class, dlogits);
        mlp_backward(params_, mlp_cfg_, cache, dlogits, grads);
        return loss;
    }

private:
    struct PleCache {
        TensorT<Real> encoded;  // B x F x n_bins
        int rows = 0;
    };

    void rebuild_ple_dims() {
        embedded_features_.clear();
        passthrough_features_.clear();
        for (int f = 0; f < n_num_; ++f)
            (ple_.passthrough(f) ? passthrough_features_ : embedded_features_).push_back(f);
        backbone_in_dim_ = static_cast<int>(embedded_features_.size()) * ple_.d_embedding +
                           static_cast<int>(passthrough_features_.size()) + tail_width_;
    }

    // Gather the backbone input for mlp / tabm_packed, or the pre-embedding
    // standard rows for mlp_ple's tail.
    TensorT<Real> assemble_input(const EncodedSplit& split, const std::vector<int>* rows,
                                 int begin, int count) const {
        if (spec_.kind == ModelKind::mlp_ple) return assemble_ple_input(split, rows, nullptr);
        TensorT<Real> x = TensorT<Real>::zeros({count, split.x.cols()});
        for (int i = 0; i < count; ++i) {
            const int r = rows ? (*rows)[static_cast<std::size_t>(begin + i)] : begin + i;
            for (int c = 0; c < split.x.cols(); ++c)
                x(i, c) = static_cast<Real>(split.x(r, c));
        }
        return x;
    }

    TensorT<Real> assemble_ple_input(const EncodedSplit& split, const std::vector<int>* rows,
                                     PleCache* cache) const {
        return assemble_ple_input_with(split, rows, cache, params_);
    }

    TensorT<Real> assemble_ple_input_with(const EncodedSplit& split, const std::vector<int>* rows,
                                          PleCache* cache, const ParamSetT<Real>& weights) const {
        const int count = rows ? static_cast<int>(rows->size()) : split.rows;
        TensorT<Real> raw = TensorT<Real>::zeros({count, std::max(n_num_, 1)});
        for (int i = 0; i < count; ++i) {
            const int r = rows ? (*rows)[static_cast<std::size_t>(i)] : i;
            for (int f = 0; f < n_num_; ++f)
                raw(i, f) = static_cast<Real>(split.x_num_raw(r, f));
        }
        TensorT<Real> enc = n_num_ > 0 ? ple_encode(raw, ple_) : TensorT<Real>();
        TensorT<Real> input = TensorT<Real>::zeros({count, backbone_in_dim_});
        const auto& w = n_num_ > 0 ? weights.at("embed.weight") : input;  // unused when n_num_ == 0
        const auto& b = n_num_ > 0 ? weights.at("embed.bias") : input;
        for (int i = 0; i < count; ++i) {
            int c = 0;
            for (const int f : embedded_features_) {
                for (int d = 0; d < ple_.d_embedding; ++d) {
                    Real s = b(f * ple_.d_embedding + d);
                    for (int t = 0; t < ple_.n_bins; ++t) s += enc(i, f, t) * w(f, t, d);
                    input(i, c + d) = s;
                }
                c += ple_.d_embedding;
            }
            for (const int f : passthrough_features_) input(i, c++) = raw(i, f);
            const int r = rows ? (*rows)[static_cast<std::size_t>(i)] : i;
            for (int t = 0; t < tail_width_; ++t)
                input(i, c + t) = static_cast<Real>(split.x(r, n_num_ + t));
        }
        if (cache) {
            cache->encoded = std::move(enc);
            cache->rows = count;
        }
        return input;
    }

    void ple_backward(const PleCache& cache, const TensorT<Real>& dinput,
                      GradSetT<Real>& grads) const {
        if (n_num_ == 0) return;
        auto& dw = grads.at("embed.weight");
        auto& db = grads.at("embed.bias");
        int c = 0;
        for (const int f : embedded_features_) {
            for (int i = 0; i < cache.rows; ++i) {
                for (int d = 0; d < ple_.d_embedding; ++d) {
                    const Real g = dinput(i, c + d);
                    db(f * ple_.d_embedding + d) += g;
                    for (int t = 0; t < ple_.n_bins; ++t) dw(f, t, d) += cache.encoded(i, f, t) * g;
                }
            }
            c += ple_.d_embedding;
        }
        // Passthrough features and the standard tail carry no parameters.
    }

    ModelSpec spec_;
    TaskType task_ = TaskType::binclass;
    MLPConfig mlp_cfg_;
    PLEConfig ple_;
    ParamSetT<Real> params_;
    int n_num_ = 0;
    int tail_width_ = 0;
    int backbone_in_dim_ = 0;
    std::vector<int> embedded_features_;
    std::vector<int> passthrough_features_;
};

using Model = ModelT<double>;

/// Convenience builder from an encoded dataset.
template <std::floating_point Real = double>
ModelT<Real> build_model(const ModelSpec& spec, const EncodedDataset& data, std::uint64_t seed) {
    ModelInputInfo info;
    info.task = data.meta().task_type;
    info.out_dim = data.out_dim();
    info.std_width = data.in_dim();
    info.n_num = data.n_num();
    info.train_raw_num = &data.train().x_num_raw;
    return ModelT<Real>::build(spec, info, seed);
}

}  // namespace tabopt
