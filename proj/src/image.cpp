#include "deepfidelity/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "deepfidelity/errors.hpp"

namespace deepfidelity {

namespace {

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
        } else if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            break;
        }
    }
    while ((c = is.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
    return tok;
}

} // namespace

ImageU8 read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image '" + path + "'");
    const std::string magic = next_token(is);
    int channels;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        throw FormatError(path + ": unsupported image format '" + magic + "' (expected P5/P6)");
    ImageU8 img;
    img.channels = channels;
    try {
        img.width = std::stoi(next_token(is));
        img.height = std::stoi(next_token(is));
        const int maxval = std::stoi(next_token(is));
        if (maxval != 255) throw FormatError(path + ": only maxval 255 is supported");
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception&) {
        throw FormatError(path + ": malformed header");
    }
    if (img.width < 1 || img.height < 1 || img.width > 1 << 16 || img.height > 1 << 16)
        throw FormatError(path + ": implausible dimensions");
    const size_t n = static_cast<size_t>(img.width) * img.height * channels;
    img.pixels.resize(n);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) throw FormatError(path + ": truncated pixel data");
    return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
    if (img.channels != 3) throw ContractError("write_ppm: expected 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

void write_pgm(const std::string& path, const ImageU8& img) {
    if (img.channels != 1) throw ContractError("write_pgm: expected 1 channel");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

Tensor<float> image_to_tensor(const ImageU8& img) {
    const size_t h = static_cast<size_t>(img.height), w = static_cast<size_t>(img.width);
    std::vector<float> data(3 * h * w);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x)
            for (size_t c = 0; c < 3; ++c) {
                const size_t src = (y * w + x) * img.channels + (img.channels == 3 ? c : 0);
                data[c * h * w + y * w + x] = static_cast<float>(img.pixels[src]) / 255.0f;
            }
    return Tensor<float>::from_data({3, h, w}, std::move(data));
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
    if (t.ndim() != 3) throw ContractError("tensor_to_image: expected [C,H,W]");
    const size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    if (c != 1 && c != 3) throw ContractError("tensor_to_image: expected 1 or 3 channels");
    ImageU8 img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.channels = static_cast<int>(c);
    img.pixels.resize(c * h * w);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x)
            for (size_t ch = 0; ch < c; ++ch) {
                float v = std::clamp(t.data()[ch * h * w + y * w + x], 0.0f, 1.0f);
                img.pixels[(y * w + x) * c + ch] =
                    static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    return img;
}

Tensor<float> resize_bilinear(const Tensor<float>& chw, int out_h, int out_w) {
    if (chw.ndim() != 3) throw DimensionError("resize_bilinear: expected [C,H,W]");
    if (out_h < 1 || out_w < 1) throw DomainError("resize_bilinear: output size must be positive");
    const size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (static_cast<int>(h) == out_h && static_cast<int>(w) == out_w) {
        return Tensor<float>::from_data(chw.shape(), chw.values());
    }
    std::vector<float> out(c * out_h * out_w);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const size_t y0 = static_cast<size_t>(fy);
        const size_t y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const size_t x0 = static_cast<size_t>(fx);
            const size_t x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - static_cast<double>(x0);
            for (size_t ch = 0; ch < c; ++ch) {
                const float* p = chw.data() + ch * h * w;
                const double top = p[y0 * w + x0] * (1 - wx) + p[y0 * w + x1] * wx;
                const double bot = p[y1 * w + x0] * (1 - wx) + p[y1 * w + x1] * wx;
                out[ch * out_h * out_w + static_cast<size_t>(oy) * out_w + ox] =
                    static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return Tensor<float>::from_data({c, static_cast<size_t>(out_h), static_cast<size_t>(out_w)},
                                    std::move(out));
}

void gaussian_blur_plane(std::vector<float>& plane, int h, int w, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += kernel[i + radius];
    }
    for (double& k : kernel) k /= norm;
    std::vector<float> tmp(plane.size());
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    // horizontal
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * plane[y * w + clampi(x + i, 0, w - 1)];
            tmp[y * w + x] = static_cast<float>(acc);
        }
    // vertical
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp[clampi(y + i, 0, h - 1) * w + x];
            plane[y * w + x] = static_cast<float>(acc);
        }
}

} // namespace deepfidelity
