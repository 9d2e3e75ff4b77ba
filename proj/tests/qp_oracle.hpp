#pragma once

// Test-only oracles, independent of the production SMO solver:
//  - dense projected-gradient (FISTA) solver for the epsilon-SVR dual QP
//  - Jacobi eigenvalue iteration for symmetric matrices
//
// The QP is the same 2n-variable formulation the solver uses:
//   min 0.5 a'Qa + p'a,  0 <= a <= C,  z'a = 0
//   z = (+1...+1, -1...-1), p = (eps - y; eps + y),
//   Q[i][j] = z_i z_j K(i mod n, j mod n).

#include <algorithm>
#include <cmath>
#include <vector>

namespace qporacle {

struct QpSolution {
    std::vector<double> alpha;
    double objective = 0.0;
    int iterations = 0;
};

class SvrDualQp {
public:
    SvrDualQp(const std::vector<std::vector<double>>& kernel, const std::vector<double>& y,
              double C, double eps)
        : kernel_(kernel), n_(y.size()), C_(C) {
        p_.resize(2 * n_);
        for (size_t i = 0; i < n_; ++i) {
            p_[i] = eps - y[i];
            p_[n_ + i] = eps + y[i];
        }
    }

    double q(size_t i, size_t j) const {
        const double zi = i < n_ ? 1.0 : -1.0;
        const double zj = j < n_ ? 1.0 : -1.0;
        return zi * zj * kernel_[i % n_][j % n_];
    }

    std::vector<double> gradient(const std::vector<double>& a) const {
        const size_t m = 2 * n_;
        std::vector<double> g(p_);
        for (size_t i = 0; i < m; ++i) {
            if (a[i] == 0.0) continue;
            for (size_t r = 0; r < m; ++r) g[r] += q(r, i) * a[i];
        }
        return g;
    }

    double objective(const std::vector<double>& a) const {
        const size_t m = 2 * n_;
        double obj = 0;
        for (size_t i = 0; i < m; ++i) {
            if (a[i] == 0.0) continue;
            double qa = 0;
            for (size_t j = 0; j < m; ++j) qa += q(i, j) * a[j];
            obj += a[i] * (0.5 * qa + p_[i]);
        }
        return obj;
    }

    // projection onto {0 <= a <= C} intersected with {z'a = 0} by bisection
    // on the hyperplane multiplier
    std::vector<double> project(const std::vector<double>& v) const {
        const size_t m = 2 * n_;
        auto clip = [&](double x) { return std::clamp(x, 0.0, C_); };
        auto h = [&](double lam) {
            double acc = 0;
            for (size_t i = 0; i < m; ++i) {
                const double zi = i < n_ ? 1.0 : -1.0;
                acc += zi * clip(v[i] - lam * zi);
            }
            return acc;
        };
        double lo = -1.0, hi = 1.0;
        for (const double x : v) {
            lo = std::min(lo, -(std::abs(x) + C_ + 1));
            hi = std::max(hi, std::abs(x) + C_ + 1);
        }
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (h(mid) > 0)
                lo = mid;
            else
                hi = mid;
        }
        const double lam = 0.5 * (lo + hi);
        std::vector<double> out(m);
        for (size_t i = 0; i < m; ++i) {
            const double zi = i < n_ ? 1.0 : -1.0;
            out[i] = clip(v[i] - lam * zi);
        }
        return out;
    }

    double lipschitz_bound() const {
        const size_t m = 2 * n_;
        double worst = 0;
        for (size_t i = 0; i < m; ++i) {
            double row = 0;
            for (size_t j = 0; j < m; ++j) row += std::abs(q(i, j));
            worst = std::max(worst, row);
        }
        return std::max(worst, 1e-12);
    }

    size_t n() const { return n_; }
    double box() const { return C_; }

private:
    const std::vector<std::vector<double>>& kernel_;
    size_t n_;
    double C_;
    std::vector<double> p_;
};

// FISTA with function-value restart; returns the best iterate seen.
inline QpSolution solve_svr_dual_pg(const std::vector<std::vector<double>>& kernel,
                                    const std::vector<double>& y, double C, double eps,
                                    int max_iters = 100000, double tol = 1e-12) {
    SvrDualQp qp(kernel, y, C, eps);
    const size_t m = 2 * y.size();
    const double step = 1.0 / qp.lipschitz_bound();

    std::vector<double> a(m, 0.0), prev(m, 0.0), look(m, 0.0);
    double t = 1.0;
    QpSolution best;
    best.alpha = a;
    best.objective = qp.objective(a);

    for (int it = 0; it < max_iters; ++it) {
        auto g = qp.gradient(look);
        std::vector<double> v(m);
        for (size_t i = 0; i < m; ++i) v[i] = look[i] - step * g[i];
        prev = a;
        a = qp.project(v);
        const double f = qp.objective(a);
        if (f < best.objective) {
            best.objective = f;
            best.alpha = a;
        }
        double move = 0;
        for (size_t i = 0; i < m; ++i) move = std::max(move, std::abs(a[i] - prev[i]));
        if (move < tol) {
            best.iterations = it + 1;
            break;
        }
        double f_prev_gap = qp.objective(prev) - f;
        if (f_prev_gap < 0) {
            // restart momentum
            t = 1.0;
            look = a;
        } else {
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            for (size_t i = 0; i < m; ++i)
                look[i] = a[i] + ((t - 1.0) / t_next) * (a[i] - prev[i]);
            t = t_next;
        }
        best.iterations = it + 1;
    }
    return best;
}

// independent objective evaluation for comparing two solvers' solutions
inline double svr_dual_objective(const std::vector<std::vector<double>>& kernel,
                                 const std::vector<double>& y, double C, double eps,
                                 const std::vector<double>& alpha) {
    return SvrDualQp(kernel, y, C, eps).objective(alpha);
}

// Jacobi eigenvalue iteration for a symmetric matrix; returns all eigenvalues.
inline std::vector<double> symmetric_eigenvalues_jacobi(std::vector<std::vector<double>> a) {
    const size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-18) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double sign = theta >= 0 ? 1.0 : -1.0;
                const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> eig(n);
    for (size_t i = 0; i < n; ++i) eig[i] = a[i][i];
    return eig;
}

} // namespace qporacle
