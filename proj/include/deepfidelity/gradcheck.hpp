#pragma once

// Central-finite-difference gradient verification. Always run in double
// precision; float round-off would mask genuine gradient bugs.

#include <cmath>
#include <functional>
#include <vector>

#include "deepfidelity/errors.hpp"
#include "deepfidelity/tensor.hpp"

namespace deepfidelity {

// fn must rebuild its graph from `inputs` on every call and return a scalar.
// Returns max over all input entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<Tensor<double>()>& fn,
                         std::vector<Tensor<double>>& inputs, double h = 1e-4) {
    if (h <= 0) throw DomainError("grad_check: h must be > 0");
    for (auto& in : inputs) in.set_requires_grad(true);
    zero_grads(inputs);

    Tensor<double> y = fn();
    if (y.numel() != 1)
        throw ContractError("grad_check: fn must be scalar-valued, got " + shape_str(y.shape()));
    backward(y);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());

    double max_err = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        double* d = inputs[t].data();
        for (size_t i = 0; i < inputs[t].numel(); ++i) {
            const double saved = d[i];
            double yp, ym;
            {
                NoGradGuard ng;
                d[i] = saved + h;
                yp = fn().item();
                d[i] = saved - h;
                ym = fn().item();
            }
            d[i] = saved;
            const double numeric = (yp - ym) / (2.0 * h);
            const double a = analytic[t][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, std::abs(a - numeric) / denom);
        }
    }
    return max_err;
}

} // namespace deepfidelity
