#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "d3sr/autodiff.hpp"
#include "d3sr/nn_ops.hpp"
#include "d3sr/rng.hpp"

namespace d3sr {

// Flat registry of named parameter tensors. Names are hierarchical
// ("denoiser.down1.res.conv1.weight"); ordering is insertion order, which the
// networks keep deterministic.
template <typename T>
class ParamStore {
public:
    int add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        index_[name] = static_cast<int>(names_.size());
        names_.push_back(name);
        values_.push_back(std::move(value));
        return static_cast<int>(names_.size()) - 1;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return values_[static_cast<size_t>(it->second)];
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return values_[static_cast<size_t>(it->second)];
    }

    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }

    // Names matching a prefix, in insertion order.
    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& n : names_)
            if (n.rfind(prefix, 0) == 0) out.push_back(n);
        return out;
    }

    int64_t numel_with_prefix(const std::string& prefix) const {
        int64_t n = 0;
        for (const auto& name : names_)
            if (name.rfind(prefix, 0) == 0) n += get(name).numel();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> values_;
    std::unordered_map<std::string, int> index_;
};

// Low-rank additive updates on named base weights. A base weight W of shape
// (d_out, ...) is treated as a (d_out, d_in) matrix; the effective weight is
// W + (alpha/rank) * A*B with A (d_out, rank) randomly initialized and B
// (rank, d_in) zero-initialized, so attachment leaves the forward pass
// unchanged until training moves B.
template <typename T>
struct LoraSet {
    int rank = 16;
    double alpha = 16.0;
    std::string prefix;  // parameter namespace, e.g. "lora.g."

    std::vector<std::string> attached;
    std::vector<int> ranks;  // effective rank per attached weight

    static std::string a_name(const std::string& prefix, const std::string& base) {
        return prefix + base + ".A";
    }
    static std::string b_name(const std::string& prefix, const std::string& base) {
        return prefix + base + ".B";
    }

    // With cap_to_dims, a weight narrower than `rank` gets a full-rank adapter
    // instead of an error; the alpha/rank scaling always uses the effective
    // rank.
    void attach(ParamStore<T>& store, const std::vector<std::string>& base_names, Rng& rng,
                bool cap_to_dims = false) {
        if (rank < 1) throw std::invalid_argument("lora rank must be >= 1");
        for (const auto& name : base_names) {
            const Tensor<T>& w = store.get(name);  // throws on unknown name
            const int d_out = w.dim(0);
            const int d_in = static_cast<int>(w.numel() / d_out);
            int r = rank;
            if (r > std::min(d_out, d_in)) {
                if (!cap_to_dims)
                    throw std::invalid_argument("lora rank " + std::to_string(rank) +
                                                " exceeds weight dimension of " + name);
                r = std::min(d_out, d_in);
            }
            Tensor<T> A({d_out, r});
            rng.fill_normal(A, 0.0, 1.0 / std::sqrt(static_cast<double>(r)));
            Tensor<T> B({r, d_in});  // zeros
            store.add(a_name(prefix, name), std::move(A));
            store.add(b_name(prefix, name), std::move(B));
            attached.push_back(name);
            ranks.push_back(r);
        }
    }

    bool is_attached(const std::string& base_name) const {
        for (const auto& n : attached)
            if (n == base_name) return true;
        return false;
    }

    int rank_of(const std::string& base_name) const {
        for (size_t i = 0; i < attached.size(); ++i)
            if (attached[i] == base_name) return ranks[i];
        throw std::invalid_argument("no adapter attached to " + base_name);
    }

    int64_t trainable_numel(const ParamStore<T>& store) const {
        int64_t n = 0;
        for (const auto& name : attached) {
            n += store.get(a_name(prefix, name)).numel();
            n += store.get(b_name(prefix, name)).numel();
        }
        return n;
    }
};

// Per-graph cache mapping parameters to leaf Vars. `trainable` decides which
// leaves require gradients; adapted weights are composed on the fly.
template <typename T>
class Binding {
public:
    Binding(Graph<T>& g, ParamStore<T>& store) : g_(&g), store_(&store) {}

    void set_trainable(std::function<bool(const std::string&)> pred) {
        trainable_ = std::move(pred);
    }
    void set_lora(const LoraSet<T>* lora) {
        loras_.clear();
        if (lora) loras_.push_back(lora);
    }
    void add_lora(const LoraSet<T>* lora) {
        if (lora) loras_.push_back(lora);
    }

    Graph<T>& graph() { return *g_; }
    ParamStore<T>& store() { return *store_; }

    // Leaf for a raw parameter.
    Var operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        const bool req = trainable_ && trainable_(name);
        Var v = g_->leaf(store_->get(name), req);
        cache_[name] = v;
        return v;
    }

    // Effective weight: base plus low-rank update when attached.
    Var weight(const std::string& name) {
        Var base = (*this)(name);
        const LoraSet<T>* lora = nullptr;
        for (const LoraSet<T>* l : loras_)
            if (l->is_attached(name)) {
                lora = l;
                break;
            }
        if (!lora) return base;
        const std::string key = "!adapted!" + name;
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        Var A = (*this)(LoraSet<T>::a_name(lora->prefix, name));
        Var B = (*this)(LoraSet<T>::b_name(lora->prefix, name));
        Var delta = scale(*g_, matmul(*g_, A, B), lora->alpha / lora->rank_of(name));
        Var eff = add(*g_, base, reshape(*g_, delta, g_->val(base).shape));
        cache_[key] = eff;
        return eff;
    }

    // Leaf previously created for a parameter, if any.
    Var var_for(const std::string& name) const {
        auto it = cache_.find(name);
        return it == cache_.end() ? Var{} : it->second;
    }

private:
    Graph<T>* g_;
    ParamStore<T>* store_;
    std::vector<const LoraSet<T>*> loras_;
    std::function<bool(const std::string&)> trainable_;
    std::unordered_map<std::string, Var> cache_;
};

// Gradients of the named parameters after a backward pass; zeros for
// parameters that did not participate.
template <typename T>
std::map<std::string, Tensor<T>> collect_grads(Graph<T>& g, Binding<T>& b,
                                               const std::vector<std::string>& names) {
    std::map<std::string, Tensor<T>> out;
    for (const auto& name : names) {
        Var v = b.var_for(name);
        out[name] = v.valid() ? g.grad_of(v) : Tensor<T>::zeros(b.store().get(name).shape);
    }
    return out;
}

}  // namespace d3sr
