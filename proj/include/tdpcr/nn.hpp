#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "tdpcr/autograd.hpp"
#include "tdpcr/rng.hpp"
#include "tdpcr/tensor.hpp"

namespace tdpcr {

template <typename T>
struct Parameter {
    std::string group;
    std::string name;  // full path, unique
    Value<T> value;
    bool trainable = true;

    size_t size() const { return value.val.size(); }
};

// Owns every learnable tensor, partitioned into named groups. Freeze policy
// and checkpointing operate on this registry, never on module internals.
template <typename T>
class ParamStore {
public:
    Parameter<T>* create(const std::string& group, const std::string& name, Tensor<T> init, bool trainable = true) {
        if (by_name_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<T>>();
        p->group = group;
        p->name = name;
        p->value.val = std::move(init);
        p->value.requires_grad = trainable;
        p->trainable = trainable;
        Parameter<T>* raw = p.get();
        by_name_[name] = raw;
        groups_.insert(group);
        params_.push_back(std::move(p));
        return raw;
    }

    const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }

    Parameter<T>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    const std::set<std::string>& group_names() const { return groups_; }

    // Exact scalar count over the given groups; empty filter counts nothing,
    // nullptr-like "all" overload below.
    size_t count(const std::vector<std::string>& group_filter) const {
        for (const auto& g : group_filter)
            if (!groups_.count(g)) throw ArgumentError("unknown parameter group: " + g);
        std::set<std::string> want(group_filter.begin(), group_filter.end());
        size_t n = 0;
        for (const auto& p : params_)
            if (want.count(p->group)) n += p->size();
        return n;
    }
    size_t count_all() const {
        size_t n = 0;
        for (const auto& p : params_) n += p->size();
        return n;
    }

    void set_group_trainable(const std::string& group, bool trainable) {
        if (!groups_.count(group)) throw ArgumentError("unknown parameter group: " + group);
        for (auto& p : params_)
            if (p->group == group) {
                p->trainable = trainable;
                p->value.requires_grad = trainable;
            }
    }

    void zero_grads() {
        for (auto& p : params_) p->value.zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, Parameter<T>*> by_name_;
    std::set<std::string> groups_;
};

namespace nn {

template <typename T>
Tensor<T> uniform_init(const std::vector<int>& shape, double bound, Rng rng) {
    Tensor<T> t(shape);
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamStore<T>& st, const std::string& group, const std::string& prefix, int cin, int cout, int k,
           int stride, int pad, const Rng& rng, bool zero_init = false)
        : stride_(stride), pad_(pad) {
        const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
        w_ = st.create(group, prefix + ".w", uniform_init<T>({cout, cin, k, k}, bound, rng.stream(prefix + ".w")));
        b_ = st.create(group, prefix + ".b", uniform_init<T>({cout}, bound, rng.stream(prefix + ".b")));
    }
    Value<T>* forward(Tape<T>& tp, Value<T>* x) const { return ag::conv2d(tp, x, &w_->value, &b_->value, stride_, pad_); }
    Parameter<T>* weight() const { return w_; }
    Parameter<T>* bias() const { return b_; }

private:
    Parameter<T>* w_ = nullptr;
    Parameter<T>* b_ = nullptr;
    int stride_ = 1, pad_ = 0;
};

template <typename T>
class DwConv2d {
public:
    DwConv2d() = default;
    DwConv2d(ParamStore<T>& st, const std::string& group, const std::string& prefix, int c, int k, int pad,
             const Rng& rng)
        : pad_(pad) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(k) * k);
        w_ = st.create(group, prefix + ".w", uniform_init<T>({c, k, k}, bound, rng.stream(prefix + ".w")));
        b_ = st.create(group, prefix + ".b", uniform_init<T>({c}, bound, rng.stream(prefix + ".b")));
    }
    Value<T>* forward(Tape<T>& tp, Value<T>* x) const { return ag::dwconv2d(tp, x, &w_->value, &b_->value, pad_); }

private:
    Parameter<T>* w_ = nullptr;
    Parameter<T>* b_ = nullptr;
    int pad_ = 0;
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParamStore<T>& st, const std::string& group, const std::string& prefix, int cin, int cout, const Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
        w_ = st.create(group, prefix + ".w", uniform_init<T>({cout, cin}, bound, rng.stream(prefix + ".w")));
        b_ = st.create(group, prefix + ".b", uniform_init<T>({cout}, bound, rng.stream(prefix + ".b")));
    }
    Value<T>* forward(Tape<T>& tp, Value<T>* x) const { return ag::linear(tp, x, &w_->value, &b_->value); }

private:
    Parameter<T>* w_ = nullptr;
    Parameter<T>* b_ = nullptr;
};

template <typename T>
class LayerNorm2d {
public:
    LayerNorm2d() = default;
    LayerNorm2d(ParamStore<T>& st, const std::string& group, const std::string& prefix, int c) {
        gamma_ = st.create(group, prefix + ".gamma", Tensor<T>::full({c}, T(1)));
        beta_ = st.create(group, prefix + ".beta", Tensor<T>({c}));
    }
    Value<T>* forward(Tape<T>& tp, Value<T>* x) const {
        return ag::layernorm_chan(tp, x, &gamma_->value, &beta_->value);
    }

private:
    Parameter<T>* gamma_ = nullptr;
    Parameter<T>* beta_ = nullptr;
};

// Zero-initialized per-channel residual scale.
template <typename T>
class ChannelScale {
public:
    ChannelScale() = default;
    ChannelScale(ParamStore<T>& st, const std::string& group, const std::string& prefix, int c) {
        w_ = st.create(group, prefix + ".scale", Tensor<T>({c}));
    }
    Value<T>* forward(Tape<T>& tp, Value<T>* x) const { return ag::scale_chan_param(tp, x, &w_->value); }

private:
    Parameter<T>* w_ = nullptr;
};

}  // namespace nn
}  // namespace tdpcr
