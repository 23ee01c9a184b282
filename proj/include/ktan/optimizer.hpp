#pragma once

#include "ktan/network.hpp"

namespace ktan {

// SGD with momentum and weight decay:
//   v <- mu*v - lr*(g + wd*w);  w <- w + v
template <typename T>
struct OptimizerState {
    T learning_rate = T(0.2);
    T momentum = T(0.9);
    T weight_decay = T(1e-4);
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> velocity;
};

namespace detail {

template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& vel, const OptimizerState<T>& opt) {
    if (vel.empty()) vel = Tensor<T>(param.shape());
    check_same_shape(param, grad, "sgd_step gradient");
    for (int64_t i = 0; i < param.numel(); ++i) {
        vel[i] = opt.momentum * vel[i] - opt.learning_rate * (grad[i] + opt.weight_decay * param[i]);
        param[i] += vel[i];
    }
}

}  // namespace detail

template <typename T>
void sgd_step(NetworkState<T>& state, const GradMap<T>& grads, OptimizerState<T>& opt) {
    if (opt.weight_decay < T(0)) throw ShapeError("sgd_step: weight_decay must be >= 0");
    for (const auto& [name, gwb] : grads) {
        auto it = state.groups.find(name);
        if (it == state.groups.end()) throw ShapeError("sgd_step: unknown parameter group " + name);
        if (it->second.frozen) throw ShapeError("sgd_step: gradient supplied for frozen group " + name);
        if (!gwb.first.all_finite() || !gwb.second.all_finite())
            throw NanError("gradient of " + name);
        auto& vel = opt.velocity[name];
        detail::sgd_update(it->second.weight, gwb.first, vel.first, opt);
        detail::sgd_update(it->second.bias, gwb.second, vel.second, opt);
    }
}

}  // namespace ktan
