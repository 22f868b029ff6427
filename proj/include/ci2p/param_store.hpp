#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ci2p/errors.hpp"
#include "ci2p/tensor.hpp"

namespace ci2p {

// Named parameter registry. Frozen entries are excluded from optimizer
// updates and carry no Adam state. Iteration order is the lexicographic name
// order of std::map, which keeps training deterministic.
template <class S>
class ParamStore {
public:
    struct Entry {
        Tensor<S> tensor;
        bool frozen = false;
        std::vector<S> adam_m;
        std::vector<S> adam_v;
    };

    Tensor<S> add(const std::string& name, Tensor<S> tensor, bool frozen = false) {
        if (entries_.count(name)) {
            throw ConfigError("ParamStore: duplicate parameter name '" + name + "'");
        }
        Entry e;
        e.tensor = tensor;
        e.frozen = frozen;
        if (!frozen) {
            tensor.set_requires_grad(true);
            e.adam_m.assign(static_cast<std::size_t>(tensor.numel()), S(0));
            e.adam_v.assign(static_cast<std::size_t>(tensor.numel()), S(0));
        }
        entries_.emplace(name, std::move(e));
        return tensor;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor<S> get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return it->second.tensor;
    }

    bool is_frozen(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return it->second.frozen;
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::map<std::string, Entry>& entries() { return entries_; }

    std::size_t size() const { return entries_.size(); }

    std::int64_t element_count() const {
        std::int64_t n = 0;
        for (const auto& [name, e] : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [name, e] : entries_) {
            Tensor<S> t = e.tensor;
            t.zero_grad();
        }
    }

    // Bias-corrected Adam on every trainable entry; all gradients (including
    // those of frozen entries, if any) are cleared afterward.
    void adam_step(double lr, double beta1, double beta2, double eps, long t) {
        if (t < 1) throw ContractError("adam_step: step index must be >= 1");
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (auto& [name, e] : entries_) {
            if (e.frozen) continue;
            auto node = e.tensor.node();
            if (!node->requires_grad || node->grad.size() != node->data.size()) {
                throw ContractError("adam_step: missing gradient for parameter '" + name + "'");
            }
            for (std::size_t i = 0; i < node->data.size(); ++i) {
                const double g = static_cast<double>(node->grad[i]);
                const double m = beta1 * static_cast<double>(e.adam_m[i]) + (1.0 - beta1) * g;
                const double v = beta2 * static_cast<double>(e.adam_v[i]) + (1.0 - beta2) * g * g;
                e.adam_m[i] = static_cast<S>(m);
                e.adam_v[i] = static_cast<S>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                node->data[i] = static_cast<S>(static_cast<double>(node->data[i]) -
                                               lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
        for (auto& [name, e] : entries_) {
            Tensor<S> tt = e.tensor;
            tt.zero_grad();
        }
    }

    // Flat byte-comparable snapshot of a name-prefixed subset.
    std::vector<S> snapshot(const std::string& prefix = "") const {
        std::vector<S> out;
        for (const auto& [name, e] : entries_) {
            if (name.rfind(prefix, 0) != 0) continue;
            out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
        }
        return out;
    }

private:
    std::map<std::string, Entry> entries_;
};

}  // namespace ci2p
