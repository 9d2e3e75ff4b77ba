#pragma once

// Minimal binary PPM (P6) / PGM (P5) image support plus the resampling
// helpers the pipeline needs. Images on disk are 8-bit; in memory the
// pipeline works on [C,H,W] float tensors in [0,1].

#include <cstdint>
#include <string>
#include <vector>

#include "deepfidelity/tensor.hpp"

namespace deepfidelity {

struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;             // 1 or 3
    std::vector<uint8_t> pixels;  // HWC interleaved
};

ImageU8 read_image(const std::string& path);         // P5 or P6
void write_ppm(const std::string& path, const ImageU8& img);   // 3-channel
void write_pgm(const std::string& path, const ImageU8& img);   // 1-channel

// [3,H,W] float in [0,1]; grayscale inputs are replicated across channels.
Tensor<float> image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor<float>& t);  // clamps to [0,1], quantizes

// Bilinear resampling with half-pixel centers; identity when sizes match.
Tensor<float> resize_bilinear(const Tensor<float>& chw, int out_h, int out_w);

// Separable Gaussian blur with clamp-to-edge; sigma <= 0 is the identity.
void gaussian_blur_plane(std::vector<float>& plane, int h, int w, double sigma);

} // namespace deepfidelity
