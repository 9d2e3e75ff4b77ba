#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// The scalar type is a template parameter: float is the working precision,
// double exists for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "deepfidelity/errors.hpp"

namespace deepfidelity {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Global switch that disables graph recording (inference / numeric probes).
class GradMode {
public:
    static bool enabled() { return enabled_; }
    static void set_enabled(bool on) { enabled_ = on; }

private:
    static inline thread_local bool enabled_ = true;
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    bool prev_;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void accumulate(size_t i, T v) {
        grad[i] += v;
    }
};

template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->data.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t ndim() const { return node_->shape.size(); }
    size_t dim(size_t i) const { return node_->shape[i]; }
    size_t numel() const { return node_->data.size(); }

    T* data() { return node_->data.data(); }
    const T* data() const { return node_->data.data(); }
    std::vector<T>& values() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor with numel " + std::to_string(numel()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() const {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Drops the recorded history, keeping values (used for optimizer state holders).
    void detach_() {
        node_->parents.clear();
        node_->backward_fn = nullptr;
    }

    std::shared_ptr<Node> node() const { return node_; }

    bool all_finite() const {
        for (T v : node_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<TensorNode<T>>> parents,
                      std::function<void(TensorNode<T>&)> bwd) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool track = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents)
            if (p && p->requires_grad) track = true;
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    return Tensor<T>(std::move(n));
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) +
                             " vs " + shape_str(b));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
            }
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
            }
        });
}

// Multiply by a compile-time-known constant (no gradient to the constant).
template <typename T>
Tensor<T> cmul(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * c;
    auto an = a.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), {an}, [an, c](TensorNode<T>& o) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
        });
}

// Multiply by a learnable scalar tensor (numel 1). Gradient flows to both.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, const Tensor<T>& s) {
    if (s.numel() != 1)
        throw DimensionError("scale: scalar operand has numel " + std::to_string(s.numel()));
    const T sv = s.data()[0];
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * sv;
    auto an = a.node();
    auto sn = s.node();
    return detail::make_result<T>(
        a.shape(), std::move(out), {an, sn}, [an, sn, sv](TensorNode<T>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * sv;
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                T acc = 0;
                for (size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * an->data[i];
                sn->grad[0] += acc;
            }
        });
}

// a + b where b's shape equals the trailing axes of a (bias broadcast).
template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size())
        throw DimensionError("add_bias: bias rank exceeds input rank");
    for (size_t i = 0; i < bs.size(); ++i)
        if (bs[i] != as[as.size() - bs.size() + i])
            throw DimensionError("add_bias: bias shape " + shape_str(bs) +
                                 " does not match trailing axes of " + shape_str(as));
    const size_t inner = shape_numel(bs);
    const size_t outer = a.numel() / inner;
    std::vector<T> out(a.numel());
    const T* pa = a.data();
    const T* pb = b.data();
    for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) out[o * inner + i] = pa[o * inner + i] + pb[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        as, std::move(out), {an, bn}, [an, bn, outer, inner](TensorNode<T>& o) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t ot = 0; ot < outer; ++ot)
                    for (size_t i = 0; i < inner; ++i) bn->grad[i] += o.grad[ot * inner + i];
            }
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    std::vector<T> out(x.numel());
    const T* px = x.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double v = static_cast<double>(px[i]);
        out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)));
    }
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), {xn}, [xn](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                double v = static_cast<double>(xn->data[i]);
                double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                double pdf = std::exp(-0.5 * v * v) * inv_sqrt_2pi;
                xn->grad[i] += o.grad[i] * static_cast<T>(phi + v * pdf);
            }
        });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(new_shape));
    auto xn = x.node();
    return detail::make_result<T>(
        std::move(new_shape), x.values(), {xn}, [xn](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        });
}

namespace detail {

inline std::vector<size_t> row_major_strides(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

} // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& axes) {
    const Shape& s = x.shape();
    if (axes.size() != s.size()) throw DimensionError("permute: axes rank mismatch");
    std::vector<bool> seen(s.size(), false);
    Shape out_shape(s.size());
    for (size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= s.size() || seen[axes[i]]) throw DimensionError("permute: invalid axes");
        seen[axes[i]] = true;
        out_shape[i] = s[axes[i]];
    }
    auto in_strides = detail::row_major_strides(s);
    auto out_strides = detail::row_major_strides(out_shape);
    const size_t n = x.numel();
    const size_t rank = s.size();
    std::vector<T> out(n);
    const T* px = x.data();
    // mapping: out[i0,..] = in[axes[0]->i0,...]; build source index per output index
    std::vector<size_t> src_stride_for_out(rank);
    for (size_t i = 0; i < rank; ++i) src_stride_for_out[i] = in_strides[axes[i]];
    for (size_t idx = 0; idx < n; ++idx) {
        size_t rem = idx, src = 0;
        for (size_t d = 0; d < rank; ++d) {
            size_t q = rem / out_strides[d];
            rem -= q * out_strides[d];
            src += q * src_stride_for_out[d];
        }
        out[idx] = px[src];
    }
    auto xn = x.node();
    return detail::make_result<T>(
        out_shape, std::move(out), {xn},
        [xn, out_strides, src_stride_for_out, rank](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t idx = 0; idx < o.grad.size(); ++idx) {
                size_t rem = idx, src = 0;
                for (size_t d = 0; d < rank; ++d) {
                    size_t q = rem / out_strides[d];
                    rem -= q * out_strides[d];
                    src += q * src_stride_for_out[d];
                }
                xn->grad[src] += o.grad[idx];
            }
        });
}

// Reverses the last (width) axis.
template <typename T>
Tensor<T> hflip(const Tensor<T>& x) {
    if (x.ndim() < 1 || x.numel() == 0)
        throw DomainError("hflip: tensor must have at least one non-empty axis");
    const size_t w = x.shape().back();
    const size_t rows = x.numel() / w;
    std::vector<T> out(x.numel());
    const T* px = x.data();
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < w; ++j) out[r * w + j] = px[r * w + (w - 1 - j)];
    auto xn = x.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), {xn}, [xn, rows, w](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < w; ++j)
                    xn->grad[r * w + (w - 1 - j)] += o.grad[r * w + j];
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    const T* px = x.data();
    for (size_t i = 0; i < x.numel(); ++i) acc += px[i];
    auto xn = x.node();
    return detail::make_result<T>(
        {1}, {acc}, {xn}, [xn](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += o.grad[0];
        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const size_t n = x.numel();
    T acc = 0;
    const T* px = x.data();
    for (size_t i = 0; i < n; ++i) acc += px[i];
    acc /= static_cast<T>(n);
    auto xn = x.node();
    return detail::make_result<T>(
        {1}, {acc}, {xn}, [xn, n](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const T g = o.grad[0] / static_cast<T>(n);
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        });
}

// Mean over the spatial axes of an NCHW tensor.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() != 4) throw DimensionError("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
    const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t hw = h * w;
    std::vector<T> out(n * c);
    const T* px = x.data();
    for (size_t i = 0; i < n * c; ++i) {
        T acc = 0;
        for (size_t j = 0; j < hw; ++j) acc += px[i * hw + j];
        out[i] = acc / static_cast<T>(hw);
    }
    auto xn = x.node();
    return detail::make_result<T>(
        {n, c}, std::move(out), {xn}, [xn, hw](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) {
                const T g = o.grad[i] / static_cast<T>(hw);
                for (size_t j = 0; j < hw; ++j) xn->grad[i * hw + j] += g;
            }
        });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const size_t rank = x.ndim();
    int ax_i = axis;
    if (ax_i < 0) ax_i += static_cast<int>(rank);
    if (ax_i < 0 || ax_i >= static_cast<int>(rank))
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    const size_t ax = static_cast<size_t>(ax_i);
    const Shape& s = x.shape();
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= s[i];
    for (size_t i = ax + 1; i < rank; ++i) inner *= s[i];
    const size_t a = s[ax];
    std::vector<T> out(x.numel());
    const T* px = x.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * a * inner + in;
            T mx = px[base];
            for (size_t k = 1; k < a; ++k) mx = std::max(mx, px[base + k * inner]);
            T denom = 0;
            for (size_t k = 0; k < a; ++k) {
                T e = std::exp(px[base + k * inner] - mx);
                out[base + k * inner] = e;
                denom += e;
            }
            for (size_t k = 0; k < a; ++k) out[base + k * inner] /= denom;
        }
    }
    auto xn = x.node();
    auto result = detail::make_result<T>(
        s, std::move(out), {xn}, [xn, outer, inner, a](TensorNode<T>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t ot = 0; ot < outer; ++ot) {
                for (size_t in = 0; in < inner; ++in) {
                    const size_t base = ot * a * inner + in;
                    T dot = 0;
                    for (size_t k = 0; k < a; ++k)
                        dot += o.grad[base + k * inner] * o.data[base + k * inner];
                    for (size_t k = 0; k < a; ++k) {
                        const size_t idx = base + k * inner;
                        xn->grad[idx] += o.data[idx] * (o.grad[idx] - dot);
                    }
                }
            }
        });
    return result;
}

// ---------------------------------------------------------------------------
// Matrix multiplication (rank >= 2; equal leading batch axes)
// ---------------------------------------------------------------------------

// Batched matrix product. Leading axes must match; a rank-2 right-hand side
// broadcasts across the left operand's batch axes.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw DimensionError("matmul: operands must have rank >= 2");
    const bool broadcast_b = bs.size() == 2 && as.size() > 2;
    if (!broadcast_b) {
        if (as.size() != bs.size())
            throw DimensionError("matmul: rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
        for (size_t i = 0; i + 2 < as.size(); ++i)
            if (as[i] != bs[i])
                throw DimensionError("matmul: batch axes differ " + shape_str(as) + " vs " +
                                     shape_str(bs));
    }
    const size_t rank = as.size();
    const size_t m = as[rank - 2], k = as[rank - 1];
    const size_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != k2)
        throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " vs " +
                             std::to_string(k2) + " do not agree");
    size_t batch = 1;
    for (size_t i = 0; i + 2 < rank; ++i) batch *= as[i];
    Shape out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(batch * m * n, T(0));
    const T* pa = a.data();
    const T* pb = b.data();
    for (size_t bi = 0; bi < batch; ++bi) {
        const T* A = pa + bi * m * k;
        const T* B = pb + (broadcast_b ? 0 : bi * k * n);
        T* C = out.data() + bi * m * n;
        for (size_t i = 0; i < m; ++i) {
            for (size_t kk = 0; kk < k; ++kk) {
                const T av = A[i * k + kk];
                const T* Brow = B + kk * n;
                T* Crow = C + i * n;
                for (size_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
            }
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {an, bn},
        [an, bn, batch, m, k, n, broadcast_b](TensorNode<T>& o) {
            const T* G = o.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = G * B^T
                for (size_t bi = 0; bi < batch; ++bi) {
                    const T* Gb = G + bi * m * n;
                    const T* B = bn->data.data() + (broadcast_b ? 0 : bi * k * n);
                    T* dA = an->grad.data() + bi * m * k;
                    for (size_t i = 0; i < m; ++i)
                        for (size_t kk = 0; kk < k; ++kk) {
                            T acc = 0;
                            for (size_t j = 0; j < n; ++j) acc += Gb[i * n + j] * B[kk * n + j];
                            dA[i * k + kk] += acc;
                        }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T * G, accumulated over broadcast batches
                for (size_t bi = 0; bi < batch; ++bi) {
                    const T* Gb = G + bi * m * n;
                    const T* A = an->data.data() + bi * m * k;
                    T* dB = bn->grad.data() + (broadcast_b ? 0 : bi * k * n);
                    for (size_t kk = 0; kk < k; ++kk)
                        for (size_t i = 0; i < m; ++i) {
                            const T av = A[i * k + kk];
                            for (size_t j = 0; j < n; ++j) dB[kk * n + j] += av * Gb[i * n + j];
                        }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias,
                 int stride, int padding, int groups) {
    if (input.ndim() != 4)
        throw DimensionError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
    if (kernel.ndim() != 4)
        throw DimensionError("conv2d: kernel must be [Cout,Cin/g,kH,kW], got " + shape_str(kernel.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    if (groups < 1) throw ConfigError("conv2d: groups must be >= 1");
    const size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const size_t Cout = kernel.dim(0), Ckg = kernel.dim(1), kH = kernel.dim(2), kW = kernel.dim(3);
    if (Cin % static_cast<size_t>(groups) != 0)
        throw ConfigError("conv2d: input channels " + std::to_string(Cin) +
                          " not divisible by groups " + std::to_string(groups));
    if (Cout % static_cast<size_t>(groups) != 0)
        throw ConfigError("conv2d: output channels " + std::to_string(Cout) +
                          " not divisible by groups " + std::to_string(groups));
    if (Ckg != Cin / static_cast<size_t>(groups))
        throw DimensionError("conv2d: kernel expects " + std::to_string(Ckg) +
                             " channels per group but input provides " +
                             std::to_string(Cin / static_cast<size_t>(groups)));
    if (H + 2 * static_cast<size_t>(padding) < kH || W + 2 * static_cast<size_t>(padding) < kW)
        throw DimensionError("conv2d: kernel " + std::to_string(kH) + "x" + std::to_string(kW) +
                             " larger than padded input " + shape_str(input.shape()));
    if (bias && (bias->ndim() != 1 || bias->dim(0) != Cout))
        throw DimensionError("conv2d: bias shape " + shape_str(bias->shape()) +
                             " does not match output channels " + std::to_string(Cout));
    const size_t Ho = (H + 2 * padding - kH) / stride + 1;
    const size_t Wo = (W + 2 * padding - kW) / stride + 1;
    const size_t cout_g = Cout / static_cast<size_t>(groups);

    std::vector<T> out(N * Cout * Ho * Wo);
    const T* pin = input.data();
    const T* pk = kernel.data();
    const T* pbias = bias ? bias->data() : nullptr;
    const int ip = padding, is = stride;
    for (size_t n = 0; n < N; ++n) {
        for (size_t co = 0; co < Cout; ++co) {
            const size_t g = co / cout_g;
            const size_t ci0 = g * Ckg;
            for (size_t oh = 0; oh < Ho; ++oh) {
                for (size_t ow = 0; ow < Wo; ++ow) {
                    T acc = pbias ? pbias[co] : T(0);
                    const int ih0 = static_cast<int>(oh) * is - ip;
                    const int iw0 = static_cast<int>(ow) * is - ip;
                    for (size_t ci = 0; ci < Ckg; ++ci) {
                        const T* in_c = pin + ((n * Cin + ci0 + ci) * H) * W;
                        const T* k_c = pk + ((co * Ckg + ci) * kH) * kW;
                        for (size_t kh = 0; kh < kH; ++kh) {
                            const int ih = ih0 + static_cast<int>(kh);
                            if (ih < 0 || ih >= static_cast<int>(H)) continue;
                            for (size_t kw = 0; kw < kW; ++kw) {
                                const int iw = iw0 + static_cast<int>(kw);
                                if (iw < 0 || iw >= static_cast<int>(W)) continue;
                                acc += in_c[ih * W + iw] * k_c[kh * kW + kw];
                            }
                        }
                    }
                    out[((n * Cout + co) * Ho + oh) * Wo + ow] = acc;
                }
            }
        }
    }

    auto in_n = input.node();
    auto k_n = kernel.node();
    auto b_n = bias ? bias->node() : nullptr;
    std::vector<std::shared_ptr<TensorNode<T>>> parents = {in_n, k_n};
    if (b_n) parents.push_back(b_n);
    return detail::make_result<T>(
        {N, Cout, Ho, Wo}, std::move(out), std::move(parents),
        [in_n, k_n, b_n, N, Cin, H, W, Cout, Ckg, kH, kW, Ho, Wo, cout_g, ip, is](TensorNode<T>& o) {
            const T* G = o.grad.data();
            const bool need_in = in_n->requires_grad;
            const bool need_k = k_n->requires_grad;
            const bool need_b = b_n && b_n->requires_grad;
            if (need_in) in_n->ensure_grad();
            if (need_k) k_n->ensure_grad();
            if (need_b) b_n->ensure_grad();
            for (size_t n = 0; n < N; ++n) {
                for (size_t co = 0; co < Cout; ++co) {
                    const size_t g = co / cout_g;
                    const size_t ci0 = g * Ckg;
                    for (size_t oh = 0; oh < Ho; ++oh) {
                        for (size_t ow = 0; ow < Wo; ++ow) {
                            const T go = G[((n * Cout + co) * Ho + oh) * Wo + ow];
                            if (need_b) b_n->grad[co] += go;
                            if (!need_in && !need_k) continue;
                            const int ih0 = static_cast<int>(oh) * is - ip;
                            const int iw0 = static_cast<int>(ow) * is - ip;
                            for (size_t ci = 0; ci < Ckg; ++ci) {
                                const size_t in_base = ((n * Cin + ci0 + ci) * H) * W;
                                const size_t k_base = ((co * Ckg + ci) * kH) * kW;
                                for (size_t kh = 0; kh < kH; ++kh) {
                                    const int ih = ih0 + static_cast<int>(kh);
                                    if (ih < 0 || ih >= static_cast<int>(H)) continue;
                                    for (size_t kw = 0; kw < kW; ++kw) {
                                        const int iw = iw0 + static_cast<int>(kw);
                                        if (iw < 0 || iw >= static_cast<int>(W)) continue;
                                        if (need_k)
                                            k_n->grad[k_base + kh * kW + kw] +=
                                                go * in_n->data[in_base + ih * W + iw];
                                        if (need_in)
                                            in_n->grad[in_base + ih * W + iw] +=
                                                go * k_n->data[k_base + kh * kW + kw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding, int groups) {
    return conv2d(input, kernel, &bias, stride, padding, groups);
}

// ---------------------------------------------------------------------------
// Normalization layers
// ---------------------------------------------------------------------------

// Batch normalization over (N,H,W) per channel. In training mode the batch
// statistics are used and running stats are updated in place with `momentum`
// (running var uses the unbiased estimate). In eval mode running stats are used.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      T momentum, T eps) {
    if (x.ndim() != 4) throw DimensionError("batchnorm2d: expected NCHW, got " + shape_str(x.shape()));
    if (eps <= T(0)) throw DomainError("batchnorm2d: eps must be > 0");
    const size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw DimensionError("batchnorm2d: affine/stat sizes must equal channel count " + std::to_string(C));
    const size_t m = N * H * W;
    if (training && m == 1)
        throw DomainError("batchnorm2d: degenerate batch (N*H*W == 1) in training mode");
    const size_t hw = H * W;
    const T* px = x.data();
    std::vector<T> mean_c(C), invstd_c(C);
    if (training) {
        for (size_t c = 0; c < C; ++c) {
            T acc = 0;
            for (size_t n = 0; n < N; ++n) {
                const T* p = px + (n * C + c) * hw;
                for (size_t j = 0; j < hw; ++j) acc += p[j];
            }
            const T mu = acc / static_cast<T>(m);
            T var = 0;
            for (size_t n = 0; n < N; ++n) {
                const T* p = px + (n * C + c) * hw;
                for (size_t j = 0; j < hw; ++j) {
                    const T d = p[j] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);
            mean_c[c] = mu;
            invstd_c[c] = T(1) / std::sqrt(var + eps);
            // PyTorch-style running update; unbiased variance for the running stat.
            const T unbiased = var * static_cast<T>(m) / static_cast<T>(m - 1);
            running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mu;
            running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * unbiased;
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean_c[c] = running_mean.data()[c];
            invstd_c[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
        }
    }

    std::vector<T> out(x.numel());
    const T* pg = gamma.data();
    const T* pb = beta.data();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            const T* p = px + (n * C + c) * hw;
            T* po = out.data() + (n * C + c) * hw;
            const T mu = mean_c[c], is = invstd_c[c], g = pg[c], b = pb[c];
            for (size_t j = 0; j < hw; ++j) po[j] = (p[j] - mu) * is * g + b;
        }

    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, mean_c, invstd_c, N, C, hw, m, training](TensorNode<T>& o) {
            const T* G = o.grad.data();
            const T* px = xn->data.data();
            const bool need_x = xn->requires_grad;
            const bool need_g = gn->requires_grad;
            const bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (size_t c = 0; c < C; ++c) {
                const T mu = mean_c[c], is = invstd_c[c];
                T sum_g = 0, sum_gx = 0;
                for (size_t n = 0; n < N; ++n) {
                    const size_t base = (n * C + c) * hw;
                    for (size_t j = 0; j < hw; ++j) {
                        const T g = G[base + j];
                        sum_g += g;
                        sum_gx += g * (px[base + j] - mu) * is;
                    }
                }
                if (need_g) gn->grad[c] += sum_gx;
                if (need_b) bn->grad[c] += sum_g;
                if (!need_x) continue;
                const T gamma_c = gn->data[c];
                if (training) {
                    const T inv_m = T(1) / static_cast<T>(m);
                    for (size_t n = 0; n < N; ++n) {
                        const size_t base = (n * C + c) * hw;
                        for (size_t j = 0; j < hw; ++j) {
                            const T xhat = (px[base + j] - mu) * is;
                            xn->grad[base + j] +=
                                gamma_c * is * (G[base + j] - sum_g * inv_m - xhat * sum_gx * inv_m);
                        }
                    }
                } else {
                    for (size_t n = 0; n < N; ++n) {
                        const size_t base = (n * C + c) * hw;
                        for (size_t j = 0; j < hw; ++j)
                            xn->grad[base + j] += gamma_c * is * G[base + j];
                    }
                }
            }
        });
}

// Layer normalization over the last axis.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.ndim() < 1) throw DimensionError("layernorm: rank must be >= 1");
    if (eps <= T(0)) throw DomainError("layernorm: eps must be > 0");
    const size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layernorm: affine size must equal last axis " + std::to_string(d));
    const size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    std::vector<T> mean_r(rows), invstd_r(rows);
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    for (size_t r = 0; r < rows; ++r) {
        const T* p = px + r * d;
        T mu = 0;
        for (size_t j = 0; j < d; ++j) mu += p[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (size_t j = 0; j < d; ++j) {
            const T dv = p[j] - mu;
            var += dv * dv;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        mean_r[r] = mu;
        invstd_r[r] = is;
        T* po = out.data() + r * d;
        for (size_t j = 0; j < d; ++j) po[j] = (p[j] - mu) * is * pg[j] + pb[j];
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return detail::make_result<T>(
        x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, mean_r, invstd_r, rows, d](TensorNode<T>& o) {
            const T* G = o.grad.data();
            const T* px = xn->data.data();
            const bool need_x = xn->requires_grad;
            const bool need_g = gn->requires_grad;
            const bool need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_g) gn->ensure_grad();
            if (need_b) bn->ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const size_t base = r * d;
                const T mu = mean_r[r], is = invstd_r[r];
                T sum_g = 0, sum_gx = 0;
                for (size_t j = 0; j < d; ++j) {
                    const T xhat = (px[base + j] - mu) * is;
                    const T gg = G[base + j] * gn->data[j];
                    sum_g += gg;
                    sum_gx += gg * xhat;
                    if (need_g) gn->grad[j] += G[base + j] * xhat;
                    if (need_b) bn->grad[j] += G[base + j];
                }
                if (!need_x) continue;
                const T inv_d = T(1) / static_cast<T>(d);
                for (size_t j = 0; j < d; ++j) {
                    const T xhat = (px[base + j] - mu) * is;
                    xn->grad[base + j] +=
                        is * (G[base + j] * gn->data[j] - sum_g * inv_d - xhat * sum_gx * inv_d);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Post-order DFS; cycles are impossible by construction but checked anyway.
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> done, on_stack;
    struct Frame {
        TensorNode<T>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    on_stack.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode<T>* p = f.node->parents[f.next_parent++].get();
            if (!p || done.count(p) || !p->requires_grad) continue;
            if (on_stack.count(p)) throw ContractError("backward: cycle in recorded graph");
            stack.push_back({p, 0});
            on_stack.insert(p);
        } else {
            order.push_back(f.node);
            done.insert(f.node);
            on_stack.erase(f.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

template <typename T>
void zero_grads(const std::vector<Tensor<T>>& tensors) {
    for (const auto& t : tensors) t.zero_grad();
}

} // namespace deepfidelity
