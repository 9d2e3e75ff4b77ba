#pragma once

// epsilon-insensitive support vector regression with an RBF kernel
// K(x,x') = exp(-||x-x'||^2 / (2 sigma^2)), trained by SMO-style pairwise
// coordinate ascent on the dual.

#include <cstdint>
#include <string>
#include <vector>

namespace deepfidelity {

struct SVRModel {
    std::vector<std::vector<double>> support_vectors;  // standardized features
    std::vector<double> dual_coefs;                    // beta_i = alpha_i - alpha_i*
    double bias = 0.0;
    double sigma = 1.0;
    std::vector<double> feat_mean;  // z-score stats from the training set
    std::vector<double> feat_std;   // zero-variance dims stored as 1

    // indices of the stored support vectors in the training set; populated by
    // svr_fit, empty after load_svr (not part of the file format)
    std::vector<size_t> sv_indices;

    std::vector<double> standardize(const std::vector<double>& x) const;
};

struct SVRTrainConfig {
    double C = 1.0;
    double epsilon = 0.05;
    double tolerance = 1e-3;
    int max_passes = 50;
    double sigma = 0.0;  // <= 0 selects the median pairwise distance heuristic
    uint64_t seed = 0;   // drives the randomized stall fallback
};

// Solver diagnostics for oracle comparison.
struct SVRFitInfo {
    double dual_objective = 0.0;  // 0.5 a'Qa + p'a of the 2n-variable QP
    double final_violation = 0.0;
    int sweeps = 0;
    std::vector<double> alphas;  // 2n raw dual variables (alpha+, then alpha-)
    std::vector<double> beta;    // per-sample alpha+ - alpha-
};

double rbf_kernel(const std::vector<double>& x, const std::vector<double>& x_prime, double sigma);

std::vector<std::vector<double>> gram_matrix(const std::vector<std::vector<double>>& xs,
                                             double sigma);

// Median pairwise Euclidean distance; 1.0 when degenerate (no pairs or 0).
double median_pairwise_distance(const std::vector<std::vector<double>>& xs);

SVRModel svr_fit(const std::vector<std::vector<double>>& features,
                 const std::vector<double>& targets, const SVRTrainConfig& config,
                 SVRFitInfo* info = nullptr);

double svr_predict(const SVRModel& model, const std::vector<double>& x);

// Recomputes the maximum KKT violation (box constraints, epsilon-tube
// complementarity, sum-beta residual) from the fitted model and its training
// data. Requires sv_indices, i.e. a model fresh out of svr_fit.
double kkt_report(const SVRModel& model, const std::vector<std::vector<double>>& features,
                  const std::vector<double>& targets, const SVRTrainConfig& config);

// Model file: magic "SVRM", version, dims, stats and coefficients as f64,
// trailing CRC32.
void save_svr(const SVRModel& model, const std::string& path);
SVRModel load_svr(const std::string& path);

} // namespace deepfidelity
