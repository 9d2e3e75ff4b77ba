#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "deepfidelity/errors.hpp"
#include "deepfidelity/tensor.hpp"

namespace deepfidelity {

// AdamW with decoupled weight decay (decay applied directly to the parameter,
// then the bias-corrected Adam update).
template <typename T>
struct AdamWState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    int64_t step_count = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);

    void init(const std::vector<Tensor<T>>& params) {
        first_moment.clear();
        second_moment.clear();
        for (const auto& p : params) {
            first_moment.emplace_back(p.numel(), T(0));
            second_moment.emplace_back(p.numel(), T(0));
        }
        step_count = 0;
    }
};

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state, T lr, T weight_decay) {
    if (lr <= T(0)) throw DomainError("adamw_step: lr must be > 0");
    if (state.first_moment.size() != params.size())
        throw DimensionError("adamw_step: state holds " + std::to_string(state.first_moment.size()) +
                             " moment buffers for " + std::to_string(params.size()) + " params");
    state.step_count += 1;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1),
                                                 static_cast<double>(state.step_count)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2),
                                                 static_cast<double>(state.step_count)));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = params[pi];
        std::vector<T>& m = state.first_moment[pi];
        std::vector<T>& v = state.second_moment[pi];
        if (m.size() != p.numel())
            throw DimensionError("adamw_step: moment size mismatch on parameter " + std::to_string(pi));
        T* pd = p.data();
        const std::vector<T>& g = p.grad();
        for (size_t i = 0; i < m.size(); ++i) {
            pd[i] -= lr * weight_decay * pd[i];
            m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            pd[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

} // namespace deepfidelity
