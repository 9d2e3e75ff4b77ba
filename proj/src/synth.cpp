#include "deepfidelity/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "deepfidelity/errors.hpp"
#include "deepfidelity/image.hpp"
#include "deepfidelity/rng.hpp"

namespace deepfidelity {

void SynthConfig::validate() const {
    if (n_real < 0 || n_fake < 0) throw ConfigError("synth: sample counts must be >= 0");
    if (image_size < 16) throw ConfigError("synth: image_size must be >= 16");
    if (blur_levels.empty()) throw ConfigError("synth: blur_levels must be non-empty");
    for (double b : blur_levels)
        if (b < 0) throw ConfigError("synth: blur levels must be >= 0");
    if (asymmetry_strength < 0) throw ConfigError("synth: asymmetry_strength must be >= 0");
}

namespace {

struct Canvas {
    int s;
    std::vector<float> r, g, b;  // planar, values in [0,1]

    explicit Canvas(int size) : s(size), r(size * size), g(size * size), b(size * size) {}

    void add(int y, int x, float dr, float dg, float db, float a) {
        if (y < 0 || y >= s || x < 0 || x >= s || a <= 0) return;
        const size_t i = static_cast<size_t>(y) * s + x;
        r[i] = r[i] * (1 - a) + dr * a;
        g[i] = g[i] * (1 - a) + dg * a;
        b[i] = b[i] * (1 - a) + db * a;
    }
};

float soft_edge(double signed_dist, double feather = 0.9) {
    // 1 inside, 0 outside, smooth ramp across the boundary
    const double t = std::clamp(0.5 - signed_dist / feather, 0.0, 1.0);
    return static_cast<float>(t * t * (3 - 2 * t));
}

// filled ellipse centered at (cx, cy) with semi-axes (ax, ay)
void draw_ellipse(Canvas& c, double cx, double cy, double ax, double ay, float cr, float cg,
                  float cb, float alpha = 1.0f) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ay - 2)));
    const int y1 = std::min(c.s - 1, static_cast<int>(std::ceil(cy + ay + 2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - ax - 2)));
    const int x1 = std::min(c.s - 1, static_cast<int>(std::ceil(cx + ax + 2)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = (x - cx) / ax, dy = (y - cy) / ay;
            const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(ax, ay);
            c.add(y, x, cr, cg, cb, alpha * soft_edge(d));
        }
}

struct FaceParams {
    double cy, head_ax, head_ay;
    float skin_r, skin_g, skin_b;
    double eye_dy, eye_dx, eye_r;
    double brow_dy, brow_len, brow_th;
    double nose_len, nose_w;
    double mouth_dy, mouth_w, mouth_h;
    float bg_base;
    double bg_grad;
    float tint_r, tint_g, tint_b;
    double noise_amp;
    double blur_sigma;
    // fake-only perturbation parameters
    int perturb_kind = 0;    // 0 mouth shift, 1 cheek patch swap, 2 half shear
    int side = 1;            // +1 right, -1 left
    double eye_shift_x = 0, eye_shift_y = 0;
    double mouth_shift = 0;
    int shear_px = 0;
    int patch_size = 0, patch_y = 0;
};

FaceParams sample_face(SplitMix64& rng, const SynthConfig& cfg, bool fake) {
    const double s = cfg.image_size;
    FaceParams p{};
    p.cy = s * rng.next_uniform(0.48, 0.54);
    p.head_ax = s * rng.next_uniform(0.30, 0.36);
    p.head_ay = s * rng.next_uniform(0.38, 0.44);
    p.skin_r = static_cast<float>(rng.next_uniform(0.65, 0.85));
    p.skin_g = static_cast<float>(rng.next_uniform(0.50, 0.68));
    p.skin_b = static_cast<float>(rng.next_uniform(0.40, 0.58));
    p.eye_dy = s * rng.next_uniform(0.12, 0.17);
    p.eye_dx = s * rng.next_uniform(0.13, 0.18);
    p.eye_r = s * rng.next_uniform(0.050, 0.075);
    p.brow_dy = p.eye_dy + s * rng.next_uniform(0.07, 0.09);
    p.brow_len = p.eye_r * rng.next_uniform(2.0, 2.6);
    p.brow_th = s * rng.next_uniform(0.018, 0.030);
    p.nose_len = s * rng.next_uniform(0.10, 0.16);
    p.nose_w = s * rng.next_uniform(0.020, 0.035);
    p.mouth_dy = s * rng.next_uniform(0.20, 0.26);
    p.mouth_w = s * rng.next_uniform(0.13, 0.18);
    p.mouth_h = s * rng.next_uniform(0.028, 0.045);
    p.bg_base = static_cast<float>(rng.next_uniform(0.12, 0.32));
    p.bg_grad = rng.next_uniform(-0.06, 0.06);
    p.tint_r = static_cast<float>(rng.next_uniform(-0.03, 0.03));
    p.tint_g = static_cast<float>(rng.next_uniform(-0.03, 0.03));
    p.tint_b = static_cast<float>(rng.next_uniform(-0.03, 0.03));
    p.noise_amp = rng.next_uniform(0.010, 0.025);
    p.blur_sigma = cfg.blur_levels[rng.next_below(cfg.blur_levels.size())];
    if (fake) {
        const double k = cfg.asymmetry_strength;
        p.side = rng.next_below(2) == 0 ? -1 : 1;
        p.eye_shift_x = k * rng.next_uniform(1.5, 3.0);
        p.eye_shift_y = k * rng.next_uniform(1.0, 2.5) * (rng.next_below(2) == 0 ? -1.0 : 1.0);
        p.perturb_kind = static_cast<int>(rng.next_below(3));
        p.mouth_shift = k * rng.next_uniform(1.2, 2.5);
        p.shear_px = std::max(1, static_cast<int>(std::lround(k * rng.next_uniform(1.0, 2.0))));
        p.patch_size = std::max(2, static_cast<int>(std::lround(s * 0.12)));
        p.patch_y = static_cast<int>(rng.next_below(static_cast<uint64_t>(s * 0.5))) +
                    static_cast<int>(s * 0.2);
        p.mouth_shift *= p.side;
        p.eye_shift_x *= p.side;
    }
    return p;
}

void paint_face(Canvas& c, const FaceParams& p, bool fake) {
    const int s = c.s;
    const double cx = (s - 1) / 2.0;  // exact mirror axis

    for (int y = 0; y < s; ++y) {
        const float shade =
            p.bg_base + static_cast<float>(p.bg_grad * (static_cast<double>(y) / s - 0.5));
        for (int x = 0; x < s; ++x) {
            const size_t i = static_cast<size_t>(y) * s + x;
            c.r[i] = std::clamp(shade + p.tint_r, 0.0f, 1.0f);
            c.g[i] = std::clamp(shade + p.tint_g, 0.0f, 1.0f);
            c.b[i] = std::clamp(shade + p.tint_b, 0.0f, 1.0f);
        }
    }

    draw_ellipse(c, cx, p.cy, p.head_ax, p.head_ay, p.skin_r, p.skin_g, p.skin_b);

    const double ey = p.cy - p.eye_dy;
    double ex_l = cx - p.eye_dx, ey_l = ey;
    double ex_r = cx + p.eye_dx, ey_r = ey;
    if (fake) {
        // displace one eye; this is the structural forgery cue
        if (p.side > 0) {
            ex_r += p.eye_shift_x;
            ey_r += p.eye_shift_y;
        } else {
            ex_l += p.eye_shift_x;
            ey_l += p.eye_shift_y;
        }
    }
    for (int e = 0; e < 2; ++e) {
        const double ex = e == 0 ? ex_l : ex_r;
        const double eyy = e == 0 ? ey_l : ey_r;
        draw_ellipse(c, ex, eyy, p.eye_r, p.eye_r * 0.8, 0.93f, 0.93f, 0.90f);        // sclera
        draw_ellipse(c, ex, eyy, p.eye_r * 0.45, p.eye_r * 0.45, 0.10f, 0.08f, 0.08f);  // pupil
    }
    // eyebrows (mirrored bars)
    const double by = p.cy - p.brow_dy;
    for (int e = 0; e < 2; ++e) {
        const double bx = e == 0 ? cx - p.eye_dx : cx + p.eye_dx;
        draw_ellipse(c, bx, by, p.brow_len / 2, p.brow_th, 0.25f, 0.18f, 0.12f);
    }
    // nose: vertical bar on the mirror axis
    draw_ellipse(c, cx, p.cy + p.nose_len / 2, p.nose_w, p.nose_len, p.skin_r * 0.8f,
                 p.skin_g * 0.8f, p.skin_b * 0.8f);
    // mouth
    double mx = cx;
    if (fake && p.perturb_kind == 0) mx += p.mouth_shift;
    draw_ellipse(c, mx, p.cy + p.mouth_dy, p.mouth_w, p.mouth_h, 0.55f, 0.22f, 0.22f);

    if (fake && p.perturb_kind == 1) {
        // swap a cheek patch with a patch beneath it on the same side
        const int ps = p.patch_size;
        const int x0 = p.side > 0 ? static_cast<int>(cx + p.eye_dx * 0.6)
                                  : static_cast<int>(cx - p.eye_dx * 0.6) - ps;
        const int y0 = std::clamp(p.patch_y, 0, s - 2 * ps - 1);
        for (auto* plane : {&c.r, &c.g, &c.b})
            for (int dy = 0; dy < ps; ++dy)
                for (int dx = 0; dx < ps; ++dx) {
                    const int xa = std::clamp(x0 + dx, 0, s - 1);
                    std::swap((*plane)[static_cast<size_t>(y0 + dy) * s + xa],
                              (*plane)[static_cast<size_t>(y0 + ps + dy) * s + xa]);
                }
    }
    if (fake && p.perturb_kind == 2) {
        // shift one half horizontally (one-sided warp)
        for (auto* plane : {&c.r, &c.g, &c.b})
            for (int y = 0; y < s; ++y) {
                if (p.side > 0) {
                    for (int x = s - 1; x >= s / 2; --x) {
                        const int src = std::max(s / 2, x - p.shear_px);
                        (*plane)[static_cast<size_t>(y) * s + x] =
                            (*plane)[static_cast<size_t>(y) * s + src];
                    }
                } else {
                    for (int x = 0; x < s / 2; ++x) {
                        const int src = std::min(s / 2 - 1, x + p.shear_px);
                        (*plane)[static_cast<size_t>(y) * s + x] =
                            (*plane)[static_cast<size_t>(y) * s + src];
                    }
                }
            }
    }
}

} // namespace

Tensor<float> render_sample(const SynthConfig& config, Label label, int index) {
    config.validate();
    const bool fake = label == Label::Fake;
    SplitMix64 rng(derive_seed(config.seed, static_cast<uint64_t>(index) * 2 + (fake ? 1 : 0)));
    FaceParams p = sample_face(rng, config, fake);
    Canvas canvas(config.image_size);
    paint_face(canvas, p, fake);

    const int s = config.image_size;
    for (auto* plane : {&canvas.r, &canvas.g, &canvas.b})
        for (auto& v : *plane)
            v = std::clamp(v + static_cast<float>(rng.next_normal() * p.noise_amp), 0.0f, 1.0f);
    for (auto* plane : {&canvas.r, &canvas.g, &canvas.b})
        gaussian_blur_plane(*plane, s, s, p.blur_sigma);

    std::vector<float> data;
    data.reserve(3 * static_cast<size_t>(s) * s);
    data.insert(data.end(), canvas.r.begin(), canvas.r.end());
    data.insert(data.end(), canvas.g.begin(), canvas.g.end());
    data.insert(data.end(), canvas.b.begin(), canvas.b.end());
    for (auto& v : data) v = std::clamp(v, 0.0f, 1.0f);
    return Tensor<float>::from_data({3, static_cast<size_t>(s), static_cast<size_t>(s)},
                                    std::move(data));
}

std::string gen_synthetic(const SynthConfig& config, const std::string& out_dir) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw IoError("cannot create output directory '" + out_dir + "'");

    std::vector<FidelityRecord> records;
    char name[64];
    auto emit = [&](Label label, int index) {
        auto t = render_sample(config, label, index);
        // quality is computed on the quantized image so the manifest matches
        // what a consumer reloading the file would measure
        ImageU8 img = tensor_to_image(t);
        std::snprintf(name, sizeof(name), "img_%04d_%s.ppm", index, label_str(label).c_str());
        const auto path = std::filesystem::path(out_dir) / name;
        write_ppm(path.string(), img);
        FidelityRecord r;
        r.image_path = name;
        r.label = label;
        r.quality_raw = proxy_quality(image_to_tensor(img));
        records.push_back(std::move(r));
    };
    for (int i = 0; i < config.n_real; ++i) emit(Label::Real, i);
    for (int i = 0; i < config.n_fake; ++i) emit(Label::Fake, i);

    const auto manifest = (std::filesystem::path(out_dir) / "manifest.csv").string();
    write_manifest(manifest, records);
    return manifest;
}

} // namespace deepfidelity
