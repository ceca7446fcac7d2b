#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "granet/blocks.hpp"

namespace granet {

/// Adam with bias correction. Moment buffers are created lazily per
/// parameter; each parameter's update depends only on its own state, so the
/// sweep order cannot affect results.
template <typename T>
class Adam {
public:
    struct ParamState {
        std::vector<T> m, v;
    };

    explicit Adam(T lr = T(5e-4), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(WeightStore<T>& ws) {
        ++t_;
        const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
        const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
        for (auto& [name, p] : ws) {
            if (!p.grad)
                throw Error("adam_step: parameter '" + name + "' has no gradient buffer");
            auto& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(static_cast<std::size_t>(p.numel()), T(0));
                st.v.assign(static_cast<std::size_t>(p.numel()), T(0));
            }
            const std::int64_t n = p.numel();
            for (std::int64_t i = 0; i < n; ++i) {
                const T gi = (*p.grad)[static_cast<std::size_t>(i)];
                T& m = st.m[static_cast<std::size_t>(i)];
                T& v = st.v[static_cast<std::size_t>(i)];
                m = beta1_ * m + (T(1) - beta1_) * gi;
                v = beta2_ * v + (T(1) - beta2_) * gi * gi;
                const T mhat = m / bc1;
                const T vhat = v / bc2;
                (*p.data)[static_cast<std::size_t>(i)] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    T lr() const { return lr_; }
    void set_lr(T lr) { lr_ = lr; }
    T beta1() const { return beta1_; }
    T beta2() const { return beta2_; }
    T eps() const { return eps_; }
    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

    std::map<std::string, ParamState>& state() { return state_; }
    const std::map<std::string, ParamState>& state() const { return state_; }

private:
    T lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, ParamState> state_;
};

/// Reduce-on-plateau rule on a maximized metric: a strictly better value
/// resets the counter; once the counter exceeds `patience`, the rate is
/// multiplied by `factor` (never below `min_lr`) and the counter resets.
struct PlateauScheduler {
    double lr = 5e-4;
    double factor = 0.9;
    double min_lr = 1e-4;
    int patience = 3;
    double best_metric = -std::numeric_limits<double>::infinity();
    int epochs_since_improve = 0;

    double step(double metric) {
        if (metric > best_metric) {
            best_metric = metric;
            epochs_since_improve = 0;
        } else if (++epochs_since_improve > patience) {
            lr = std::max(min_lr, lr * factor);
            epochs_since_improve = 0;
        }
        return lr;
    }

    bool at_floor() const { return lr <= min_lr; }
};

} // namespace granet
