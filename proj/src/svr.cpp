#include "deepfidelity/svr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "deepfidelity/errors.hpp"
#include "deepfidelity/rng.hpp"
#include "deepfidelity/serialize.hpp"

namespace deepfidelity {

double rbf_kernel(const std::vector<double>& x, const std::vector<double>& x_prime, double sigma) {
    if (x.size() != x_prime.size())
        throw DimensionError("rbf_kernel: dimension mismatch " + std::to_string(x.size()) + " vs " +
                             std::to_string(x_prime.size()));
    if (sigma <= 0.0) throw DomainError("rbf_kernel: sigma must be > 0");
    double d2 = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - x_prime[i];
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * sigma * sigma));
}

std::vector<std::vector<double>> gram_matrix(const std::vector<std::vector<double>>& xs,
                                             double sigma) {
    if (xs.empty()) throw DomainError("gram_matrix: empty input");
    const size_t n = xs.size();
    std::vector<std::vector<double>> k(n, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i) {
        k[i][i] = 1.0;
        for (size_t j = i + 1; j < n; ++j) k[i][j] = k[j][i] = rbf_kernel(xs[i], xs[j], sigma);
    }
    return k;
}

double median_pairwise_distance(const std::vector<std::vector<double>>& xs) {
    std::vector<double> dists;
    dists.reserve(xs.size() * (xs.size() - 1) / 2);
    for (size_t i = 0; i < xs.size(); ++i)
        for (size_t j = i + 1; j < xs.size(); ++j) {
            double d2 = 0;
            for (size_t k = 0; k < xs[i].size(); ++k) {
                const double d = xs[i][k] - xs[j][k];
                d2 += d * d;
            }
            dists.push_back(std::sqrt(d2));
        }
    if (dists.empty()) return 1.0;
    std::sort(dists.begin(), dists.end());
    const size_t m = dists.size();
    const double med = m % 2 == 1 ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    return med > 0.0 ? med : 1.0;
}

std::vector<double> SVRModel::standardize(const std::vector<double>& x) const {
    if (x.size() != feat_mean.size())
        throw DimensionError("svr: feature dimension " + std::to_string(x.size()) +
                             " does not match model dimension " + std::to_string(feat_mean.size()));
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - feat_mean[i]) / feat_std[i];
    return out;
}

namespace {

// The 2n-variable dual: variables (alpha+, alpha-), z = (+1...,-1...),
// p = (eps - y; eps + y), Q[i][j] = z_i z_j K(i mod n, j mod n).
struct SmoProblem {
    const std::vector<std::vector<double>>& kernel;
    size_t n;
    double zsign(size_t i) const { return i < n ? 1.0 : -1.0; }
    double q(size_t i, size_t j) const {
        return zsign(i) * zsign(j) * kernel[i % n][j % n];
    }
};

} // namespace

SVRModel svr_fit(const std::vector<std::vector<double>>& features,
                 const std::vector<double>& targets, const SVRTrainConfig& config,
                 SVRFitInfo* info) {
    const size_t n = features.size();
    if (n < 2) throw DomainError("svr_fit: need at least 2 samples");
    if (targets.size() != n)
        throw DimensionError("svr_fit: " + std::to_string(n) + " features vs " +
                             std::to_string(targets.size()) + " targets");
    const size_t d = features[0].size();
    for (const auto& f : features) {
        if (f.size() != d) throw DimensionError("svr_fit: inconsistent feature dimensions");
        for (double v : f)
            if (!std::isfinite(v)) throw DomainError("svr_fit: non-finite feature value");
    }
    for (double y : targets)
        if (!std::isfinite(y)) throw DomainError("svr_fit: non-finite target value");
    if (config.C <= 0) throw DomainError("svr_fit: C must be > 0");
    if (config.epsilon < 0) throw DomainError("svr_fit: epsilon must be >= 0");

    SVRModel model;
    model.feat_mean.assign(d, 0.0);
    model.feat_std.assign(d, 1.0);
    for (size_t j = 0; j < d; ++j) {
        double mu = 0;
        for (const auto& f : features) mu += f[j];
        mu /= static_cast<double>(n);
        double var = 0;
        for (const auto& f : features) var += (f[j] - mu) * (f[j] - mu);
        var /= static_cast<double>(n);
        model.feat_mean[j] = mu;
        model.feat_std[j] = var > 0 ? std::sqrt(var) : 1.0;
    }
    std::vector<std::vector<double>> xs(n);
    for (size_t i = 0; i < n; ++i) xs[i] = model.standardize(features[i]);

    model.sigma = config.sigma > 0 ? config.sigma : median_pairwise_distance(xs);

    const auto kernel = gram_matrix(xs, model.sigma);
    const SmoProblem prob{kernel, n};
    const size_t n2 = 2 * n;
    const double C = config.C, eps = config.epsilon;

    std::vector<double> alpha(n2, 0.0);
    std::vector<double> grad(n2);  // Q alpha + p
    for (size_t i = 0; i < n; ++i) {
        grad[i] = eps - targets[i];
        grad[n + i] = eps + targets[i];
    }
    auto ghat = [&](size_t i) { return prob.zsign(i) * grad[i]; };
    auto in_up = [&](size_t i) { return i < n ? alpha[i] < C : alpha[i] > 0.0; };
    auto in_low = [&](size_t i) { return i < n ? alpha[i] > 0.0 : alpha[i] < C; };

    // one pair update; returns the step actually taken
    auto update_pair = [&](size_t i, size_t j) {
        const double zi = prob.zsign(i), zj = prob.zsign(j);
        double denom = prob.q(i, i) + prob.q(j, j) - 2.0 * zi * zj * prob.q(i, j);
        if (denom <= 0) denom = 1e-12;
        double t = (ghat(j) - ghat(i)) / denom;
        const double ti_max = zi > 0 ? C - alpha[i] : alpha[i];
        const double tj_max = zj > 0 ? alpha[j] : C - alpha[j];
        bool clip_i = false, clip_j = false;
        if (t >= ti_max) {
            t = ti_max;
            clip_i = true;
        }
        if (t >= tj_max) {
            t = tj_max;
            clip_i = false;
            clip_j = true;
        }
        if (t <= 0) return 0.0;
        alpha[i] += zi * t;
        alpha[j] -= zj * t;
        if (clip_i) alpha[i] = zi > 0 ? C : 0.0;  // land exactly on the bound
        if (clip_j) alpha[j] = zj > 0 ? 0.0 : C;
        alpha[i] = std::clamp(alpha[i], 0.0, C);
        alpha[j] = std::clamp(alpha[j], 0.0, C);
        for (size_t r = 0; r < n2; ++r)
            grad[r] += t * (zi * prob.q(r, i) - zj * prob.q(r, j));
        return t;
    };

    // maximal violating pair
    auto select_pair = [&](size_t& i, size_t& j) {
        double gmin = std::numeric_limits<double>::infinity();
        double gmax = -std::numeric_limits<double>::infinity();
        i = j = n2;
        for (size_t r = 0; r < n2; ++r) {
            if (in_up(r) && ghat(r) < gmin) {
                gmin = ghat(r);
                i = r;
            }
            if (in_low(r) && ghat(r) > gmax) {
                gmax = ghat(r);
                j = r;
            }
        }
        return (i < n2 && j < n2) ? gmax - gmin : -std::numeric_limits<double>::infinity();
    };

    SplitMix64 rng(derive_seed(config.seed, /*stream=*/7));
    const size_t max_updates = static_cast<size_t>(config.max_passes) * n2;
    size_t updates = 0;
    double violation = 0;
    size_t since_progress = 0;
    while (updates < max_updates) {
        size_t i, j;
        violation = select_pair(i, j);
        if (violation < config.tolerance) break;
        const double step = update_pair(i, j);
        ++updates;
        if (step > 1e-15) {
            since_progress = 0;
        } else if (++since_progress > n2) {
            // stalled on the same pair; sweep random feasible pairs once
            for (size_t k = 0; k < n2 && updates < max_updates; ++k) {
                const size_t ri = rng.next_below(n2), rj = rng.next_below(n2);
                if (ri == rj || !in_up(ri) || !in_low(rj)) continue;
                if (ghat(rj) - ghat(ri) <= 0) continue;
                update_pair(ri, rj);
                ++updates;
            }
            since_progress = 0;
        }
    }

    // bias from the equality-constraint multiplier: free variables pin it,
    // otherwise take the midpoint of the feasible interval
    double b_dual;
    {
        double acc = 0;
        size_t free_count = 0;
        for (size_t r = 0; r < n2; ++r)
            if (alpha[r] > 0.0 && alpha[r] < C) {
                acc += ghat(r);
                ++free_count;
            }
        if (free_count > 0) {
            b_dual = acc / static_cast<double>(free_count);
        } else {
            double ub = std::numeric_limits<double>::infinity();
            double lb = -std::numeric_limits<double>::infinity();
            for (size_t r = 0; r < n2; ++r) {
                if (in_up(r)) ub = std::min(ub, ghat(r));
                if (in_low(r)) lb = std::max(lb, ghat(r));
            }
            b_dual = 0.5 * (ub + lb);
        }
    }
    model.bias = -b_dual;

    std::vector<double> beta(n);
    for (size_t i = 0; i < n; ++i) beta[i] = alpha[i] - alpha[n + i];
    for (size_t i = 0; i < n; ++i) {
        if (std::abs(beta[i]) > 1e-8) {
            model.support_vectors.push_back(xs[i]);
            model.dual_coefs.push_back(beta[i]);
            model.sv_indices.push_back(i);
        }
    }

    if (info) {
        double obj = 0;
        for (size_t r = 0; r < n2; ++r) {
            const double p_r = r < n ? eps - targets[r] : eps + targets[r - n];
            obj += 0.5 * alpha[r] * (grad[r] + p_r);
        }
        info->dual_objective = obj;
        info->final_violation = std::max(0.0, violation);
        info->sweeps = static_cast<int>((updates + n2 - 1) / n2);
        info->alphas = alpha;
        info->beta = beta;
    }
    return model;
}

double svr_predict(const SVRModel& model, const std::vector<double>& x) {
    const auto xs = model.standardize(x);
    double acc = model.bias;
    for (size_t i = 0; i < model.support_vectors.size(); ++i)
        acc += model.dual_coefs[i] * rbf_kernel(model.support_vectors[i], xs, model.sigma);
    return acc;
}

double kkt_report(const SVRModel& model, const std::vector<std::vector<double>>& features,
                  const std::vector<double>& targets, const SVRTrainConfig& config) {
    const size_t n = features.size();
    if (targets.size() != n) throw DimensionError("kkt_report: features/targets length mismatch");
    std::vector<double> beta(n, 0.0);
    if (model.sv_indices.size() != model.dual_coefs.size())
        throw ContractError("kkt_report: model lacks training-set indices (loaded from file?)");
    for (size_t k = 0; k < model.sv_indices.size(); ++k) {
        if (model.sv_indices[k] >= n) throw ContractError("kkt_report: stale sv index");
        beta[model.sv_indices[k]] = model.dual_coefs[k];
    }
    const double C = config.C, eps = config.epsilon;
    const double at_bound = 1e-9 * std::max(1.0, C);
    double worst = 0, beta_sum = 0;
    for (size_t i = 0; i < n; ++i) {
        const double r = targets[i] - svr_predict(model, features[i]);
        const double b = beta[i];
        beta_sum += b;
        double v;
        if (std::abs(b) <= at_bound) {
            v = std::max(0.0, std::abs(r) - eps);
        } else if (b >= C - at_bound) {
            v = std::max(0.0, eps - r);
        } else if (b <= -C + at_bound) {
            v = std::max(0.0, r + eps);
        } else if (b > 0) {
            v = std::abs(r - eps);
        } else {
            v = std::abs(r + eps);
        }
        if (std::abs(b) > C + 1e-12) v = std::max(v, std::abs(b) - C);  // box violation
        worst = std::max(worst, v);
    }
    return std::max(worst, std::abs(beta_sum));
}

void save_svr(const SVRModel& model, const std::string& path) {
    std::ostringstream body;
    BinWriter bw(body);
    const size_t d = model.feat_mean.size();
    const size_t n_sv = model.support_vectors.size();
    bw.u32(static_cast<uint32_t>(d));
    bw.u32(static_cast<uint32_t>(n_sv));
    bw.f64(model.sigma);
    bw.f64(model.bias);
    for (double v : model.feat_mean) bw.f64(v);
    for (double v : model.feat_std) bw.f64(v);
    for (const auto& sv : model.support_vectors)
        for (double v : sv) bw.f64(v);
    for (double v : model.dual_coefs) bw.f64(v);

    const std::string payload = body.str();
    Crc32 crc;
    crc.update(payload.data(), payload.size());

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    BinWriter w(os);
    w.bytes("SVRM", 4);
    w.u32(1);
    w.bytes(payload.data(), payload.size());
    w.u32(crc.value());
    if (!w.good()) throw IoError("write failed for '" + path + "'");
}

SVRModel load_svr(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    BinReader r(is, path);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "SVRM") throw FormatError(path + ": bad magic (not an SVR file)");
    if (r.u32("version") != 1) throw FormatError(path + ": unsupported version");

    // read the remainder, split off the trailing CRC, then parse
    std::vector<char> rest((std::istreambuf_iterator<char>(is)), {});
    if (rest.size() < 4) throw FormatError(path + ": truncated");
    const size_t body_len = rest.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(static_cast<uint8_t>(rest[body_len + i])) << (8 * i);
    Crc32 crc;
    crc.update(rest.data(), body_len);
    if (crc.value() != stored) throw FormatError(path + ": payload checksum mismatch");

    std::istringstream body(std::string(rest.data(), body_len));
    BinReader br(body, path);
    SVRModel m;
    const uint32_t d = br.u32("dimension");
    const uint32_t n_sv = br.u32("support vector count");
    if (d == 0 || d > 1u << 20 || n_sv > 1u << 24)
        throw FormatError(path + ": implausible dimensions");
    m.sigma = br.f64("sigma");
    m.bias = br.f64("bias");
    if (!(m.sigma > 0)) throw FormatError(path + ": sigma must be > 0");
    m.feat_mean.resize(d);
    m.feat_std.resize(d);
    for (auto& v : m.feat_mean) v = br.f64("feature mean");
    for (auto& v : m.feat_std) v = br.f64("feature std");
    m.support_vectors.assign(n_sv, std::vector<double>(d));
    for (auto& sv : m.support_vectors)
        for (auto& v : sv) v = br.f64("support vector");
    m.dual_coefs.resize(n_sv);
    for (auto& v : m.dual_coefs) v = br.f64("dual coefficient");
    return m;
}

} // namespace deepfidelity
