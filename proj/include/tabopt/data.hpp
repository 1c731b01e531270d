// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabopt/common.hpp"
#include "tabopt/constants.hpp"
#include "tabopt/csv.hpp"
#include "tabopt/mathutil.hpp"
#include "tabopt/rng.hpp"
#include "tabopt/tensor.hpp"

namespace tabopt {

using Matrix = Tensor;  // rank-2, double

enum class TaskType { binclass, multiclass, regression };
enum class MetricKind { accuracy, roc_auc, rmse };

inline TaskType parse_task_type(const std::string& s) {
    if (s == "binclass") return TaskType::binclass;
    if (s == "multiclass") return TaskType::multiclass;
    if (s == "regression") return TaskType::regression;
    throw ConfigError("unknown task_type: " + s);
}

inline MetricKind parse_metric(const std::string& s) {
    if (s == "accuracy") return MetricKind::accuracy;
    if (s == "roc_auc") return MetricKind::roc_auc;
    if (s == "rmse") return MetricKind::rmse;
    throw ConfigError("unknown metric: " + s);
}

inline const char* to_string(TaskType t) {
    switch (t) {
        case TaskType::binclass: return "binclass";
        case TaskType::multiclass: return "multiclass";
        case TaskType::regression: return "regression";
    }
    return "?";
}

inline const char* to_string(MetricKind m) {
    switch (m) {
        case MetricKind::accuracy: return "accuracy";
        case MetricKind::roc_auc: return "roc_auc";
        case MetricKind::rmse: return "rmse";
    }
    return "?";
}

struct DatasetMeta {
    std::string name;
    TaskType task_type = TaskType::binclass;
    MetricKind metric = MetricKind::accuracy;
    int batch_size = 0;
    std::vector<std::string> num_features;
    std::vector<std::string> bin_features;
    std::vector<std::string> cat_features;
    bool skip_quantile_norm = false;

    void validate() const {
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        std::set<std::string> seen;
        for (const auto* list : {&num_features, &bin_features, &cat_features})
            for (const auto& c : *list)
                if (!seen.insert(c).second)
                    throw ConfigError("feature lists must be disjoint; duplicate column: " + c);
        const bool is_reg = task_type == TaskType::regression;
        if (metric == MetricKind::rmse && !is_reg)
            throw ConfigError("metric/task mismatch: rmse requires regression");
        if (is_reg && metric != MetricKind::rmse)
            throw ConfigError("metric/task mismatch: regression requires rmse");
        if (metric == MetricKind::roc_auc && task_type != TaskType::binclass)
            throw ConfigError("metric/task mismatch: roc_auc requires binclass");
    }

    nlohmann::json to_json() const {
        return {{"name", name},
                {"task_type", to_string(task_type)},
                {"metric", to_string(metric)},
                {"batch_size", batch_size},
                {"num_features", num_features},
                {"bin_features", bin_features},
                {"cat_features", cat_features},
                {"skip_quantile_norm", skip_quantile_norm}};
    }

    static DatasetMeta from_json(const nlohmann::json& j) {
        DatasetMeta m;
        try {
            m.name = j.at("name").get<std::string>();
            m.task_type = parse_task_type(j.at("task_type").get<std::string>());
            m.metric = parse_metric(j.at("metric").get<std::string>());
            m.batch_size = j.at("batch_size").get<int>();
            m.num_features = j.at("num_features").get<std::vector<std::string>>();
            m.bin_features = j.at("bin_features").get<std::vector<std::string>>();
            m.cat_features = j.at("cat_features").get<std::vector<std::string>>();
            m.skip_quantile_norm = j.at("skip_quantile_norm").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad meta.json: ") + e.what());
        }
        m.validate();
        return m;
    }
};

/// One split with columns separated by kind. Categorical values stay strings
/// until encoding; labels are class indices for classification.
struct RawSplit {
    std::vector<std::vector<double>> num_cols;
    std::vector<std::vector<double>> bin_cols;
    std::vector<std::vector<std::string>> cat_cols;
    std::vector<double> labels;  // raw target (regression) or class index
    std::size_t n_rows = 0;
};

struct SplitData {
    RawSplit train, val, test;

    int n_classes() const {
        int k = 0;
        for (const RawSplit* s : {&train, &val, &test})
            for (const double y : s->labels) k = std::max(k, static_cast<int>(y) + 1);
        return k;
    }
};

// ---------------------------------------------------------------------------
// Preprocessor
// ---------------------------------------------------------------------------

/// Empirical quantile map onto standard-normal quantiles. Fitted from the
/// train column after deterministic tie-breaking jitter; outputs clamp to
/// +-Phi^-1(1 - 1/(2 n_train)).
struct QuantileMap {
    std::vector<double> refs;  // sorted reference values at evenly spaced probs
    double p_floor = 0.0;      // 1 / (2 n_train)
    bool constant = false;
    bool identity = false;     // skip_quantile_norm datasets

    double transform(double x) const {
        if (identity) return x;
        if (constant) return 0.0;
        const auto m = refs.size();
        if (x <= refs.front()) return inverse_normal_cdf(p_floor);
        if (x >= refs.back()) return inverse_normal_cdf(1.0 - p_floor);
        const auto it = std::upper_bound(refs.begin(), refs.end(), x);
        const auto hi = static_cast<std::size_t>(it - refs.begin());
        const std::size_t lo = hi - 1;
        const double span = refs[hi] - refs[lo];
        const double frac = span > 0.0 ? (x - refs[lo]) / span : 0.0;
        const double p = (static_cast<double>(lo) + frac) / static_cast<double>(m - 1);
        return inverse_normal_cdf(std::clamp(p, p_floor, 1.0 - p_floor));
    }
};

/// One-hot vocabulary ordered by first occurrence in train; values unseen at
/// fit time map to a dedicated trailing bucket.
struct OneHotVocab {
    std::vector<std::string> values;

    int width() const { return static_cast<int>(values.size()) + 1; }

    int index_of(const std::string& v) const {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (values[i] == v) return static_cast<int>(i);
        return static_cast<int>(values.size());  // unknown bucket
    }
};

struct LabelNormalizer {
    double mean = 0.0;
    double std = 1.0;
    bool active = false;  // regression only

    double normalize(double y) const { return active ? (y - mean) / std : y; }
    double denormalize(double z) const { return active ? z * std + mean : z; }
};

class Preprocessor {
public:
    /// Fit on the train split only. Jitter, vocabularies, and the label
    /// normalizer are all derived from train; the seed fixes the jitter.
    static Preprocessor fit(const DatasetMeta& meta, const RawSplit& train, std::uint64_t seed) {
        if (train.n_rows == 0) throw ConfigError("cannot fit preprocessor on empty train split");
        Preprocessor prep;
        prep.n_num_ = static_cast<int>(meta.num_features.size());
        prep.n_bin_ = static_cast<int>(meta.bin_features.size());

        Rng jitter_root = Rng(seed).split("quantile_jitter");
        const std::size_t n = train.n_rows;
        const auto n_refs = static_cast<std::size_t>(
            std::min<std::size_t>(constants::kQuantileMaxRefs, n));
        for (std::size_t c = 0; c < train.num_cols.size(); ++c) {
            QuantileMap qm;
            qm.p_floor = 1.0 / (2.0 * static_cast<double>(n));
            if (meta.skip_quantile_norm) {
                qm.identity = true;
                prep.quantile_maps_.push_back(std::move(qm));
                continue;
            }
            std::vector<double> vals = train.num_cols[c];
            double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(n);
            double var = 0.0;
            for (const double v : vals) var += (v - mean) * (v - mean);
            const double sigma = std::sqrt(var / static_cast<double>(n));
            if (sigma == 0.0) {
                qm.constant = true;
                prep.quantile_maps_.push_back(std::move(qm));
                continue;
            }
            Rng col_rng = jitter_root.split(static_cast<std::uint64_t>(c));
            for (double& v : vals) v += constants::kQuantileJitterEps * sigma * col_rng.normal();
            std::sort(vals.begin(), vals.end());
            qm.refs.resize(n_refs);
            for (std::size_t i = 0; i < n_refs; ++i) {
                const double pos = n_refs == 1
                                       ? 0.0
                                       : static_cast<double>(i) * static_cast<double>(n - 1) /
                                             static_cast<double>(n_refs - 1);
                const auto lo = static_cast<std::size_t>(pos);
                const double frac = pos - static_cast<double>(lo);
                qm.refs[i] = lo + 1 < n ? vals[lo] * (1.0 - frac) + vals[lo + 1] * frac : vals[lo];
            }
            prep.quantile_maps_.push_back(std::move(qm));
        }

        for (const auto& col : train.cat_cols) {
            OneHotVocab vocab;
            for (const auto& v : col)
                if (std::find(vocab.values.begin(), vocab.values.end(), v) == vocab.values.end())
                    vocab.values.push_back(v);
            prep.vocabs_.push_back(std::move(vocab));
        }

        if (meta.task_type == TaskType::regression) {
            const auto& y = train.labels;
            const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
            double var = 0.0;
            for (const double v : y) var += (v - mean) * (v - mean);
            double std_dev = std::sqrt(var / static_cast<double>(n));
            if (std_dev == 0.0) std_dev = 1.0;
            prep.label_norm_ = LabelNormalizer{mean, std_dev, true};
        }
        return prep;
    }

    int encoded_width() const {
        int w = n_num_ + n_bin_;
        for (const auto& v : vocabs_) w += v.width();
        return w;
    }

    int n_num() const { return n_num_; }
    int n_bin() const { return n_bin_; }
    const std::vector<OneHotVocab>& vocabs() const { return vocabs_; }
    const LabelNormalizer& label_normalizer() const { return label_norm_; }
    const QuantileMap& quantile_map(int col) const {
        return quantile_maps_[static_cast<std::size_t>(col)];
    }

    double transform_numeric(int col, double x) const {
        return quantile_maps_[static_cast<std::size_t>(col)].transform(x);
    }

    /// Standard encoding: [quantile-normalized numerics | binaries | one-hots].
    Matrix transform(const RawSplit& split) const {
        if (split.num_cols.size() != quantile_maps_.size() ||
            split.bin_cols.size() != static_cast<std::size_t>(n_bin_) ||
            split.cat_cols.size() != vocabs_.size())
            throw ConfigError("transform: column set does not match fitted preprocessor");
        const auto rows = static_cast<int>(split.n_rows);
        Matrix out = Matrix::zeros({std::max(rows, 1), encoded_width()});
        for (int r = 0; r < rows; ++r) {
            int c = 0;
            for (std::size_t f = 0; f < split.num_cols.size(); ++f)
                out(r, c++) = quantile_maps_[f].transform(split.num_cols[f][static_cast<std::size_t>(r)]);
            for (std::size_t f = 0; f < split.bin_cols.size(); ++f)
                out(r, c++) = split.bin_cols[f][static_cast<std::size_t>(r)];
            for (std::size_t f = 0; f < split.cat_cols.size(); ++f) {
                const int idx = vocabs_[f].index_of(split.cat_cols[f][static_cast<std::size_t>(r)]);
                out(r, c + idx) = 1.0;
                c += vocabs_[f].width();
            }
        }
        return out;
    }

    /// Raw numeric feature matrix (no normalization), for piecewise-linear
    /// embedding models that bin the original values.
    Matrix raw_numeric(const RawSplit& split) const {
        const auto rows = static_cast<int>(split.n_rows);
        Matrix out = Matrix::zeros({std::max(rows, 1), std::max(n_num_, 1)});
        for (int r = 0; r < rows; ++r)
            for (int f = 0; f < n_num_; ++f)
                out(r, f) = split.num_cols[static_cast<std::size_t>(f)][static_cast<std::size_t>(r)];
        return out;
    }

    void serialize(std::ostream& os) const {
        auto wd = [&os](double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
        auto wi = [&os](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
        os.write("TPRE", 4);
        wi(1);  // version
        wi(static_cast<std::uint64_t>(n_num_));
        wi(static_cast<std::uint64_t>(n_bin_));
        wi(quantile_maps_.size());
        for (const auto& qm : quantile_maps_) {
            wi(static_cast<std::uint64_t>(qm.constant) | (static_cast<std::uint64_t>(qm.identity) << 1));
            wd(qm.p_floor);
            wi(qm.refs.size());
            for (const double r : qm.refs) wd(r);
        }
        wi(vocabs_.size());
        for (const auto& v : vocabs_) {
            wi(v.values.size());
            for (const auto& s : v.values) {
                wi(s.size());
                os.write(s.data(), static_cast<std::streamsize>(s.size()));
            }
        }
        wi(static_cast<std::uint64_t>(label_norm_.active));
        wd(label_norm_.mean);
        wd(label_norm_.std);
    }

    std::string serialized() const {
        std::ostringstream os(std::ios::binary);
        serialize(os);
        return os.str();
    }

private:
    int n_num_ = 0;
    int n_bin_ = 0;
    std::vector<QuantileMap> quantile_maps_;
    std::vector<OneHotVocab> vocabs_;
    LabelNormalizer label_norm_;
};

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

namespace detail {

inline RawSplit parse_split_csv(const std::string& path, const DatasetMeta& meta) {
    const CsvTable table = read_csv_file(path);
    RawSplit split;
    split.n_rows = table.rows.size();

    auto require_col = [&](const std::string& name) {
        const int idx = table.col_index(name);
        if (idx < 0)
            throw ConfigError(path + ": column '" + name + "' declared in meta but missing");
        return idx;
    };

    const int label_idx = table.col_index("label");
    if (label_idx < 0) throw ConfigError(path + ": missing 'label' column");

    std::vector<int> num_idx, bin_idx, cat_idx;
    for (const auto& c : meta.num_features) num_idx.push_back(require_col(c));
    for (const auto& c : meta.bin_features) bin_idx.push_back(require_col(c));
    for (const auto& c : meta.cat_features) cat_idx.push_back(require_col(c));
    const std::size_t declared =
        meta.num_features.size() + meta.bin_features.size() + meta.cat_features.size() + 1;
    if (table.header.size() != declared)
        throw ConfigError(path + ": header has " + std::to_string(table.header.size()) +
                          " columns, meta declares " + std::to_string(declared));

    split.num_cols.resize(num_idx.size());
    split.bin_cols.resize(bin_idx.size());
    split.cat_cols.resize(cat_idx.size());
    for (const auto& row : table.rows) {
        for (std::size_t f = 0; f < num_idx.size(); ++f)
            split.num_cols[f].push_back(
                parse_numeric(row[static_cast<std::size_t>(num_idx[f])],
                              path + " column " + meta.num_features[f]));
        for (std::size_t f = 0; f < bin_idx.size(); ++f)
            split.bin_cols[f].push_back(
                parse_numeric(row[static_cast<std::size_t>(bin_idx[f])],
                              path + " column " + meta.bin_features[f]));
        for (std::size_t f = 0; f < cat_idx.size(); ++f)
            split.cat_cols[f].push_back(row[static_cast<std::size_t>(cat_idx[f])]);
        const double y = parse_numeric(row[static_cast<std::size_t>(label_idx)], path + " label");
        if (meta.task_type != TaskType::regression) {
            if (y < 0.0 || y != std::floor(y))
                throw ConfigError(path + ": classification label must be a nonnegative integer");
        }
        split.labels.push_back(y);
    }
    return split;
}

}  // namespace detail

/// Load meta.json plus train/val/test CSVs from a dataset directory.
inline std::pair<DatasetMeta, SplitData> load_dataset(const std::filesystem::path& dir) {
    const auto meta_path = dir / "meta.json";
    std::ifstream mf(meta_path);
    if (!mf) throw IoError("missing file: " + meta_path.string());
    nlohmann::json mj;
    try {
        mf >> mj;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(meta_path.string() + ": " + e.what());
    }
    const DatasetMeta meta = DatasetMeta::from_json(mj);

    SplitData splits;
    for (const auto& [file, target] :
         {std::pair{"train.csv", &splits.train}, {"val.csv", &splits.val}, {"test.csv", &splits.test}}) {
        const auto path = dir / file;
        if (!std::filesystem::exists(path)) throw IoError("missing file: " + path.string());
        *target = detail::parse_split_csv(path.string(), meta);
    }
    if (meta.task_type == TaskType::binclass && splits.n_classes() > 2)
        throw ConfigError("binclass dataset has more than two label values");
    return {meta, splits};
}

/// Write a dataset directory in the same layout load_dataset reads.
inline void save_dataset(const std::filesystem::path& dir, const DatasetMeta& meta,
                         const SplitData& splits) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "meta.json");
        if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
        os << meta.to_json().dump(2) << '\n';
    }
    auto dump_split = [&](const char* file, const RawSplit& s) {
        CsvTable t;
        t.header = meta.num_features;
        t.header.insert(t.header.end(), meta.bin_features.begin(), meta.bin_features.end());
        t.header.insert(t.header.end(), meta.cat_features.begin(), meta.cat_features.end());
        t.header.push_back("label");
        for (std::size_t r = 0; r < s.n_rows; ++r) {
            std::vector<std::string> row;
            auto fmt = [](double v) {
                std::ostringstream ss;
                ss.precision(17);
                ss << v;
                return ss.str();
            };
            for (const auto& col : s.num_cols) row.push_back(fmt(col[r]));
            for (const auto& col : s.bin_cols) row.push_back(fmt(col[r]));
            for (const auto& col : s.cat_cols) row.push_back(col[r]);
            row.push_back(fmt(s.labels[r]));
            t.rows.push_back(std::move(row));
        }
        std::ofstream os(dir / file, std::ios::binary);
        if (!os) throw IoError("cannot write " + (dir / file).string());
        write_csv(os, t);
    };
    dump_split("train.csv", splits.train);
    dump_split("val.csv", splits.val);
    dump_split("test.csv", splits.test);
}

// ---------------------------------------------------------------------------
// Synthetic datasets (desk-scale stand-ins for real benchmark data)
// ---------------------------------------------------------------------------

enum class SyntheticKind { two_gaussians, linear_regression, friedman };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "two_gaussians") return SyntheticKind::two_gaussians;
    if (s == "linear_regression") return SyntheticKind::linear_regression;
    if (s == "friedman") return SyntheticKind::friedman;
    throw ConfigError("unknown synthetic kind: " + s);
}

struct SyntheticOptions {
    double separation = 6.0;  // two_gaussians: distance between class means, in noise sigmas
    double noise = -1.0;      // regression noise sigma; negative = kind default
};

inline std::pair<DatasetMeta, SplitData> make_synthetic(SyntheticKind kind, int n,
                                                        std::uint64_t seed,
                                                        SyntheticOptions opt = {}) {
    if (n < 50) throw ConfigError("synthetic dataset needs n >= 50");
    Rng rng = Rng(seed).split("synthetic");

    DatasetMeta meta;
    meta.batch_size = 256;
    std::vector<std::vector<double>> num_cols;
    std::vector<std::vector<double>> bin_cols;
    std::vector<std::vector<std::string>> cat_cols;
    std::vector<double> labels;

    switch (kind) {
        case SyntheticKind::two_gaussians: {
            meta.name = "two_gaussians";
            meta.task_type = TaskType::binclass;
            meta.metric = MetricKind::accuracy;
            meta.num_features = {"x1", "x2", "x3", "x4"};
            meta.bin_features = {"flag"};
            meta.cat_features = {"group"};
            num_cols.resize(4);
            bin_cols.resize(1);
            cat_cols.resize(1);
            static const char* kGroups[] = {"A", "B", "C"};
            for (int i = 0; i < n; ++i) {
                const int cls = rng.bernoulli(0.5) ? 1 : 0;
                num_cols[0].push_back(rng.normal() + (cls ? opt.separation : 0.0));
                for (int f = 1; f < 4; ++f)
                    num_cols[static_cast<std::size_t>(f)].push_back(rng.normal());
                bin_cols[0].push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
                cat_cols[0].push_back(kGroups[rng.uniform_int(0, 2)]);
                labels.push_back(cls);
            }
            break;
        }
        case SyntheticKind::linear_regression: {
            meta.name = "linear_regression";
            meta.task_type = TaskType::regression;
            meta.metric = MetricKind::rmse;
            const int d = 6;
            for (int f = 0; f < d; ++f) meta.num_features.push_back("x" + std::to_string(f + 1));
            num_cols.resize(static_cast<std::size_t>(d));
            std::vector<double> w(static_cast<std::size_t>(d));
            for (double& v : w) v = rng.uniform(-2.0, 2.0);
            const double bias = 0.5;
            const double noise = opt.noise < 0.0 ? 0.0 : opt.noise;
            for (int i = 0; i < n; ++i) {
                double y = bias;
                for (int f = 0; f < d; ++f) {
                    const double x = rng.normal();
                    num_cols[static_cast<std::size_t>(f)].push_back(x);
                    y += w[static_cast<std::size_t>(f)] * x;
                }
                if (noise > 0.0) y += noise * rng.normal();
                labels.push_back(y);
            }
            break;
        }
        case SyntheticKind::friedman: {
            meta.name = "friedman";
            meta.task_type = TaskType::regression;
            meta.metric = MetricKind::rmse;
            const int d = 10;
            for (int f = 0; f < d; ++f) meta.num_features.push_back("x" + std::to_string(f + 1));
            num_cols.resize(static_cast<std::size_t>(d));
            const double noise = opt.noise < 0.0 ? 1.0 : opt.noise;
            for (int i = 0; i < n; ++i) {
                std::vector<double> x(static_cast<std::size_t>(d));
                for (int f = 0; f < d; ++f) {
                    x[static_cast<std::size_t>(f)] = rng.uniform();
                    num_cols[static_cast<std::size_t>(f)].push_back(x[static_cast<std::size_t>(f)]);
                }
                double y = 10.0 * std::sin(3.14159265358979323846 * x[0] * x[1]) +
                           20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] + 5.0 * x[4];
                if (noise > 0.0) y += noise * rng.normal();
                labels.push_back(y);
            }
            break;
        }
    }

    // 64/16/20 split, in generation order (rows are already i.i.d.).
    const int n_train = static_cast<int>(std::floor(n * 0.64));
    const int n_val = static_cast<int>(std::floor(n * 0.16));
    SplitData splits;
    auto slice = [&](int lo, int hi) {
        RawSplit s;
        s.n_rows = static_cast<std::size_t>(hi - lo);
        for (const auto& col : num_cols)
            s.num_cols.emplace_back(col.begin() + lo, col.begin() + hi);
        for (const auto& col : bin_cols)
            s.bin_cols.emplace_back(col.begin() + lo, col.begin() + hi);
        for (const auto& col : cat_cols)
            s.cat_cols.emplace_back(col.begin() + lo, col.begin() + hi);
        s.labels.assign(labels.begin() + lo, labels.begin() + hi);
        return s;
    };
    splits.train = slice(0, n_train);
    splits.val = slice(n_train, n_train + n_val);
    splits.test = slice(n_train + n_val, n);
    return {meta, splits};
}

// ---------------------------------------------------------------------------
// Encoded dataset handed to the trainer
// ---------------------------------------------------------------------------

struct EncodedSplit {
    Matrix x;          // standard encoding
    Matrix x_num_raw;  // raw numeric block, for PLE models
    std::vector<int> y_class;
    std::vector<double> y_norm;  // normalized regression target
    std::vector<double> y_raw;
    int rows = 0;
};

/// Everything a training run needs, preprocessed once and then immutable.
class EncodedDataset {
public:
    EncodedDataset(DatasetMeta meta, const SplitData& splits, std::uint64_t prep_seed)
        : meta_(std::move(meta)), prep_(Preprocessor::fit(meta_, splits.train, prep_seed)) {
        n_classes_ = meta_.task_type == TaskType::regression ? 0 : splits.n_classes();
        if (meta_.task_type == TaskType::binclass) n_classes_ = 2;
        train_ = encode(splits.train);
        val_ = encode(splits.val);
        test_ = encode(splits.test);
        const auto& y = test_.y_raw;
        if (!y.empty()) {
            const double mean =
                std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
            double var = 0.0;
            for (const double v : y) var += (v - mean) * (v - mean);
            test_label_std_ = std::sqrt(var / static_cast<double>(y.size()));
        }
    }

    const DatasetMeta& meta() const { return meta_; }
    const Preprocessor& preprocessor() const { return prep_; }
    int in_dim() const { return prep_.encoded_width(); }
    int n_num() const { return prep_.n_num(); }
    int out_dim() const { return meta_.task_type == TaskType::regression ? 1 : n_classes_; }
    int n_classes() const { return n_classes_; }
    double test_label_std() const { return test_label_std_; }

    const EncodedSplit& train() const { return train_; }
    const EncodedSplit& val() const { return val_; }

    /// Test data accessor; reads are counted so the touch-once protocol
    /// contract is checkable.
    const EncodedSplit& test() const {
        test_reads_.fetch_add(1, std::memory_order_relaxed);
        return test_;
    }
    int test_read_count() const { return test_reads_.load(std::memory_order_relaxed); }

private:
    EncodedSplit encode(const RawSplit& split) const {
        EncodedSplit e;
        e.rows = static_cast<int>(split.n_rows);
        e.x = prep_.transform(split);
        e.x_num_raw = prep_.raw_numeric(split);
        e.y_raw = split.labels;
        if (meta_.task_type == TaskType::regression) {
            e.y_norm.reserve(split.labels.size());
            for (const double y : split.labels)
                e.y_norm.push_back(prep_.label_normalizer().normalize(y));
        } else {
            e.y_class.reserve(split.labels.size());
            for (const double y : split.labels) {
                const int cls = static_cast<int>(y);
                if (cls >= n_classes_) throw ConfigError("label outside class range");
                e.y_class.push_back(cls);
            }
        }
        return e;
    }

    DatasetMeta meta_;
    Preprocessor prep_;
    int n_classes_ = 0;
    double test_label_std_ = 0.0;
    EncodedSplit train_, val_, test_;
    mutable std::atomic<int> test_reads_{0};
};

}  // namespace tabopt
