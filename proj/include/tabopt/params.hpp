// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tabopt/common.hpp"
#include "tabopt/tensor.hpp"

namespace tabopt {

enum class ParamRole : std::uint8_t { matrix = 0, vector = 1, embedding = 2 };

inline const char* to_string(ParamRole r) {
    switch (r) {
        case ParamRole::matrix: return "matrix";
        case ParamRole::vector: return "vector";
        case ParamRole::embedding: return "embedding";
    }
    return "?";
}

/// Ordered name -> tensor map. Iteration order is insertion order, which
/// makes everything built on top of it (gradients, optimizer buffers,
/// serialization) deterministic.
template <std::floating_point Real>
class NamedTensorsT {
public:
    void add(std::string name, TensorT<Real> value) {
        if (index_.count(name)) throw ConfigError("duplicate tensor name: " + name);
        index_[name] = items_.size();
        items_.emplace_back(std::move(name), std::move(value));
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    TensorT<Real>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown tensor name: " + name);
        return items_[it->second].second;
    }
    const TensorT<Real>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown tensor name: " + name);
        return items_[it->second].second;
    }

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }

    friend bool operator==(const NamedTensorsT& a, const NamedTensorsT& b) {
        return a.items_ == b.items_;
    }

private:
    std::vector<std::pair<std::string, TensorT<Real>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <std::floating_point Real>
using GradSetT = NamedTensorsT<Real>;

using GradSet = GradSetT<double>;

/// Model parameters: named tensors plus a role tag and the Muon group flag.
/// Names encode layer position ("block3.linear.weight").
template <std::floating_point Real>
class ParamSetT {
public:
    struct Entry {
        TensorT<Real> value;
        ParamRole role;
        bool muon_group;

        friend bool operator==(const Entry&, const Entry&) = default;
    };

    // Role encodes tensor structure: matrix iff rank 2, vector iff rank 1,
    // embedding iff rank 3 (per-feature maps stacked along the first axis).
    void add(std::string name, TensorT<Real> value, ParamRole role, bool muon_group = false) {
        const int want = role == ParamRole::matrix ? 2 : role == ParamRole::vector ? 1 : 3;
        if (value.rank() != want)
            throw ConfigError(std::string("role ") + to_string(role) + " requires rank-" +
                              std::to_string(want) + " tensor: " + name);
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = order_.size();
        order_.push_back(name);
        entries_.push_back(Entry{std::move(value), role, muon_group});
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    TensorT<Real>& at(const std::string& name) { return entry(name).value; }
    const TensorT<Real>& at(const std::string& name) const { return entry(name).value; }

    Entry& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second];
    }
    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second];
    }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    bool empty() const { return order_.empty(); }

    Entry& entry_at(std::size_t i) { return entries_[i]; }
    const Entry& entry_at(std::size_t i) const { return entries_[i]; }
    const std::string& name_at(std::size_t i) const { return order_[i]; }

    std::size_t total_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    /// Zero-filled gradient container with matching keys and shapes.
    GradSetT<Real> make_grads() const {
        GradSetT<Real> g;
        for (std::size_t i = 0; i < order_.size(); ++i)
            g.add(order_[i], TensorT<Real>::zeros(entries_[i].value.shape()));
        return g;
    }

    void check_grads(const GradSetT<Real>& grads) const {
        if (grads.size() != size()) throw ConfigError("gradient keyset size mismatch");
        for (std::size_t i = 0; i < order_.size(); ++i) {
            const auto& g = grads.at(order_[i]);
            if (!g.same_shape(entries_[i].value))
                throw ConfigError("gradient shape mismatch for " + order_[i]);
        }
    }

    friend bool operator==(const ParamSetT& a, const ParamSetT& b) {
        return a.order_ == b.order_ && a.entries_ == b.entries_;
    }

private:
    std::vector<std::string> order_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamSet = ParamSetT<double>;

// ---------------------------------------------------------------------------
// Binary checkpoint format, version 1.
//
//   "TOPT" u32-version u8-scalar-width u64-count
//   per entry: u32 name-len, name bytes, u8 role, u8 muon, u8 rank,
//              u32 dims..., raw scalar bytes (row-major)
//
// Round-trips bitwise; little-endian hosts assumed.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated checkpoint");
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("truncated checkpoint");
    return s;
}

template <std::floating_point Real>
void write_tensor(std::ostream& os, const TensorT<Real>& t) {
    write_pod(os, static_cast<std::uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod(os, static_cast<std::uint32_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(Real)));
}

template <std::floating_point Real>
TensorT<Real> read_tensor(std::istream& is) {
    const int rank = read_pod<std::uint8_t>(is);
    if (rank < 1 || rank > 3) throw IoError("checkpoint tensor rank out of range");
    std::vector<int> shape;
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
        shape.push_back(static_cast<int>(read_pod<std::uint32_t>(is)));
        n *= static_cast<std::size_t>(shape.back());
    }
    std::vector<Real> data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(Real)));
    if (!is) throw IoError("truncated checkpoint");
    return TensorT<Real>(std::move(shape), std::move(data));
}

constexpr std::uint32_t kCheckpointVersion = 1;

template <std::floating_point Real>
void write_header(std::ostream& os, std::uint64_t count) {
    os.write("TOPT", 4);
    write_pod(os, kCheckpointVersion);
    write_pod(os, static_cast<std::uint8_t>(sizeof(Real)));
    write_pod(os, count);
}

template <std::floating_point Real>
std::uint64_t read_header(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "TOPT") throw IoError("not a tabopt checkpoint");
    if (read_pod<std::uint32_t>(is) != kCheckpointVersion)
        throw IoError("unsupported checkpoint version");
    if (read_pod<std::uint8_t>(is) != sizeof(Real))
        throw IoError("checkpoint scalar width does not match");
    return read_pod<std::uint64_t>(is);
}

}  // namespace detail

template <std::floating_point Real>
void save_params(const ParamSetT<Real>& params, std::ostream& os) {
    detail::write_header<Real>(os, params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entry_at(i);
        detail::write_string(os, params.name_at(i));
        detail::write_pod(os, static_cast<std::uint8_t>(e.role));
        detail::write_pod(os, static_cast<std::uint8_t>(e.muon_group ? 1 : 0));
        detail::write_tensor(os, e.value);
    }
    if (!os) throw IoError("checkpoint write failed");
}

template <std::floating_point Real>
ParamSetT<Real> load_params(std::istream& is) {
    const auto count = detail::read_header<Real>(is);
    ParamSetT<Real> params;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = detail::read_string(is);
        const auto role = static_cast<ParamRole>(detail::read_pod<std::uint8_t>(is));
        const bool muon = detail::read_pod<std::uint8_t>(is) != 0;
        params.add(std::move(name), detail::read_tensor<Real>(is), role, muon);
    }
    return params;
}

template <std::floating_point Real>
void save_params_file(const ParamSetT<Real>& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    save_params(params, os);
}

template <std::floating_point Real>
ParamSetT<Real> load_params_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return load_params<Real>(is);
}

}  // namespace tabopt
