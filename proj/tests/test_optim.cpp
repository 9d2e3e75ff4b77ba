#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "deepfidelity/optim.hpp"
#include "deepfidelity/tensor.hpp"

using namespace deepfidelity;

TEST_CASE("adamw first step moves by about -lr") {
    auto p = Tensor<double>::zeros({1}, true);
    p.grad()[0] = 1.0;
    std::vector<Tensor<double>> params = {p};
    AdamWState<double> st;
    st.init(params);
    adamw_step(params, st, 0.1, 0.0);
    CHECK(std::abs(p.data()[0] + 0.1) < 1e-6);
    CHECK(st.step_count == 1);
}

TEST_CASE("adamw weight decay contributes nothing at zero parameter") {
    auto p = Tensor<double>::zeros({3}, true);
    for (auto& g : p.grad()) g = 0.5;
    auto q = Tensor<double>::zeros({3}, true);
    for (auto& g : q.grad()) g = 0.5;
    std::vector<Tensor<double>> a = {p}, b = {q};
    AdamWState<double> sa, sb;
    sa.init(a);
    sb.init(b);
    adamw_step(a, sa, 0.01, 0.0);
    adamw_step(b, sb, 0.01, 10.0);
    for (size_t i = 0; i < 3; ++i) CHECK(p.data()[i] == q.data()[i]);
}

TEST_CASE("adamw zero gradient leaves params unchanged (wd=0)") {
    auto p = Tensor<double>::from_data({2}, {1.5, -2.5}, true);
    p.grad();  // allocate zeros
    std::vector<Tensor<double>> params = {p};
    AdamWState<double> st;
    st.init(params);
    adamw_step(params, st, 0.1, 0.0);
    CHECK(p.data()[0] == 1.5);
    CHECK(p.data()[1] == -2.5);
}

TEST_CASE("adamw matches scalar Adam reference over 100 steps") {
    // Independent scalar Adam on f(x) = (x-3)^2 / 2, grad = x-3.
    double ref_x = 0.0, ref_m = 0.0, ref_v = 0.0;
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;

    auto p = Tensor<double>::zeros({1}, true);
    std::vector<Tensor<double>> params = {p};
    AdamWState<double> st;
    st.init(params);

    for (int t = 1; t <= 100; ++t) {
        const double g_ref = ref_x - 3.0;
        ref_m = b1 * ref_m + (1 - b1) * g_ref;
        ref_v = b2 * ref_v + (1 - b2) * g_ref * g_ref;
        const double mhat = ref_m / (1 - std::pow(b1, t));
        const double vhat = ref_v / (1 - std::pow(b2, t));
        ref_x -= lr * mhat / (std::sqrt(vhat) + eps);

        p.zero_grad();
        p.grad()[0] = p.data()[0] - 3.0;
        adamw_step(params, st, lr, 0.0);
        CHECK(std::abs(p.data()[0] - ref_x) < 1e-10);
    }
    CHECK(st.step_count == 100);
}

TEST_CASE("adamw rejects mismatched state") {
    auto p = Tensor<double>::zeros({2}, true);
    std::vector<Tensor<double>> params = {p};
    AdamWState<double> st;  // not initialized
    CHECK_THROWS_AS(adamw_step(params, st, 0.1, 0.0), DimensionError);
}
