#pragma once

// Deterministic synthetic data: bilaterally symmetric face-like patterns for
// the real class, one-sided perturbations (scaled by asymmetry_strength) for
// the fake class, Gaussian blur from blur_levels as the quality axis.

#include <cstdint>
#include <string>
#include <vector>

#include "deepfidelity/fidelity.hpp"
#include "deepfidelity/tensor.hpp"

namespace deepfidelity {

struct SynthConfig {
    int n_real = 0;
    int n_fake = 0;
    int image_size = 32;
    std::vector<double> blur_levels = {0.0, 0.5, 1.0, 1.8};
    double asymmetry_strength = 1.0;
    uint64_t seed = 42;

    void validate() const;
};

// Renders one sample as a [3,S,S] float tensor in [0,1].
Tensor<float> render_sample(const SynthConfig& config, Label label, int index);

// Writes PPM images plus `manifest.csv` (path,label,quality with proxy
// quality scores) into out_dir; returns the manifest path.
std::string gen_synthetic(const SynthConfig& config, const std::string& out_dir);

} // namespace deepfidelity
