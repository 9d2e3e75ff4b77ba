#pragma once

// SSAAFormer: four-stage hybrid backbone. Stages 1-2 are convolutional
// (stage 1 with symmetric spatial attention augmentation), stages 3-4 are
// multi-head self-attention over spatial tokens with a depthwise-conv
// dynamic position embedding. A scalar head regresses the fidelity target.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deepfidelity/rng.hpp"
#include "deepfidelity/serialize.hpp"
#include "deepfidelity/tensor.hpp"

namespace deepfidelity {

struct ModelConfig {
    int in_channels = 3;
    int input_size = 32;                          // 224 for full-size face crops
    std::array<int, 4> stage_depths = {5, 2, 2, 2};
    std::array<int, 4> stage_channels = {16, 32, 64, 128};
    int ssaa_blocks = 5;                          // leading blocks of stage 1
    int heads_per_stage34 = 4;
    int ffn_expansion = 4;
    int dw_kernel = 5;
    int dpe_kernel = 3;
    uint64_t seed = 0;

    void validate() const {
        if (in_channels < 1) throw ConfigError("config: in_channels must be >= 1");
        if (input_size < 16 || input_size % 16 != 0)
            throw ConfigError("config: input_size must be a positive multiple of 16, got " +
                              std::to_string(input_size));
        for (int d : stage_depths)
            if (d < 1) throw ConfigError("config: stage depths must be >= 1");
        for (int c : stage_channels)
            if (c < 1) throw ConfigError("config: stage channels must be >= 1");
        if (ssaa_blocks < 0 || ssaa_blocks > stage_depths[0])
            throw ConfigError("config: ssaa_blocks must lie in [0, n1]");
        if (heads_per_stage34 < 1) throw ConfigError("config: heads must be >= 1");
        if (stage_channels[2] % heads_per_stage34 != 0 || stage_channels[3] % heads_per_stage34 != 0)
            throw ConfigError("config: stage 3/4 channels must be divisible by head count");
        if (ffn_expansion < 1) throw ConfigError("config: ffn_expansion must be >= 1");
        if (dw_kernel < 1 || dw_kernel % 2 == 0)
            throw ConfigError("config: dw_kernel must be odd and positive");
        if (dpe_kernel < 1 || dpe_kernel % 2 == 0)
            throw ConfigError("config: dpe_kernel must be odd and positive");
    }

    // Spatial side length entering each stage. Downsampling saturates at 1.
    std::array<int, 4> stage_resolutions() const {
        std::array<int, 4> r{};
        r[0] = input_size / 4;
        for (int i = 1; i < 4; ++i) r[i] = r[i - 1] > 1 ? r[i - 1] / 2 : 1;
        return r;
    }
};

inline constexpr float kBatchNormMomentum = 0.1f;
inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kLayerNormEps = 1e-6f;

enum class NormKind { Batch, TokenLayer };

template <typename T>
struct NormParams {
    NormKind kind = NormKind::Batch;
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;  // batch norm only
};

template <typename T>
struct PatchEmbed {
    Tensor<T> weight, bias;
    int kernel = 2, stride = 2;
    NormParams<T> norm;
};

template <typename T>
struct ConvBlock {
    Tensor<T> dpe_weight, dpe_bias;
    NormParams<T> norm1;
    Tensor<T> pw1_weight, pw1_bias;
    Tensor<T> dw_weight, dw_bias;
    bool use_ssaa = false;
    Tensor<T> w1, w2;  // SSAA mixing scalars, present only when use_ssaa
    Tensor<T> pw2_weight, pw2_bias;
    NormParams<T> norm2;
    Tensor<T> ffn1_weight, ffn1_bias;
    Tensor<T> ffn2_weight, ffn2_bias;
};

template <typename T>
struct AttnBlock {
    Tensor<T> dpe_weight, dpe_bias;
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> wq, bq, wk, bk, wv, bv;
    Tensor<T> wo, bo;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> ffn1_weight, ffn1_bias;
    Tensor<T> ffn2_weight, ffn2_bias;
    int heads = 1;
};

template <typename T>
struct SSAAFormerModel {
    ModelConfig config;
    std::array<PatchEmbed<T>, 4> embeds;
    std::vector<ConvBlock<T>> stage1, stage2;
    std::vector<AttnBlock<T>> stage3, stage4;
    Tensor<T> head_weight, head_bias;

    std::vector<Tensor<T>> parameters();
};

// ---------------------------------------------------------------------------
// Named tensor traversal (fixed order; drives init, serialization, counting)
// ---------------------------------------------------------------------------

// f(name, tensor&, trainable)
template <typename T, typename F>
void visit_named_tensors(SSAAFormerModel<T>& m, F&& f) {
    auto visit_norm = [&](const std::string& prefix, NormParams<T>& n) {
        f(prefix + ".gamma", n.gamma, true);
        f(prefix + ".beta", n.beta, true);
        if (n.kind == NormKind::Batch) {
            f(prefix + ".running_mean", n.running_mean, false);
            f(prefix + ".running_var", n.running_var, false);
        }
    };
    for (int s = 0; s < 4; ++s) {
        const std::string p = "embed" + std::to_string(s + 1);
        f(p + ".weight", m.embeds[s].weight, true);
        f(p + ".bias", m.embeds[s].bias, true);
        visit_norm(p + ".norm", m.embeds[s].norm);
    }
    auto visit_conv_stage = [&](const std::string& sp, std::vector<ConvBlock<T>>& blocks) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            ConvBlock<T>& b = blocks[i];
            const std::string p = sp + "." + std::to_string(i);
            f(p + ".dpe.weight", b.dpe_weight, true);
            f(p + ".dpe.bias", b.dpe_bias, true);
            visit_norm(p + ".norm1", b.norm1);
            f(p + ".pw1.weight", b.pw1_weight, true);
            f(p + ".pw1.bias", b.pw1_bias, true);
            f(p + ".dw.weight", b.dw_weight, true);
            f(p + ".dw.bias", b.dw_bias, true);
            if (b.use_ssaa) {
                f(p + ".ssaa.w1", b.w1, true);
                f(p + ".ssaa.w2", b.w2, true);
            }
            f(p + ".pw2.weight", b.pw2_weight, true);
            f(p + ".pw2.bias", b.pw2_bias, true);
            visit_norm(p + ".norm2", b.norm2);
            f(p + ".ffn1.weight", b.ffn1_weight, true);
            f(p + ".ffn1.bias", b.ffn1_bias, true);
            f(p + ".ffn2.weight", b.ffn2_weight, true);
            f(p + ".ffn2.bias", b.ffn2_bias, true);
        }
    };
    auto visit_attn_stage = [&](const std::string& sp, std::vector<AttnBlock<T>>& blocks) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            AttnBlock<T>& b = blocks[i];
            const std::string p = sp + "." + std::to_string(i);
            f(p + ".dpe.weight", b.dpe_weight, true);
            f(p + ".dpe.bias", b.dpe_bias, true);
            f(p + ".ln1.gamma", b.ln1_gamma, true);
            f(p + ".ln1.beta", b.ln1_beta, true);
            f(p + ".attn.wq", b.wq, true);
            f(p + ".attn.bq", b.bq, true);
            f(p + ".attn.wk", b.wk, true);
            f(p + ".attn.bk", b.bk, true);
            f(p + ".attn.wv", b.wv, true);
            f(p + ".attn.bv", b.bv, true);
            f(p + ".attn.wo", b.wo, true);
            f(p + ".attn.bo", b.bo, true);
            f(p + ".ln2.gamma", b.ln2_gamma, true);
            f(p + ".ln2.beta", b.ln2_beta, true);
            f(p + ".ffn1.weight", b.ffn1_weight, true);
            f(p + ".ffn1.bias", b.ffn1_bias, true);
            f(p + ".ffn2.weight", b.ffn2_weight, true);
            f(p + ".ffn2.bias", b.ffn2_bias, true);
        }
    };
    visit_conv_stage("stage1", m.stage1);
    visit_conv_stage("stage2", m.stage2);
    visit_attn_stage("stage3", m.stage3);
    visit_attn_stage("stage4", m.stage4);
    f("head.weight", m.head_weight, true);
    f("head.bias", m.head_bias, true);
}

template <typename T>
std::vector<Tensor<T>> SSAAFormerModel<T>::parameters() {
    std::vector<Tensor<T>> out;
    visit_named_tensors(*this, [&](const std::string&, Tensor<T>& t, bool trainable) {
        if (trainable) out.push_back(t);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Construction and initialization
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
NormParams<T> make_norm(NormKind kind, int channels) {
    NormParams<T> n;
    n.kind = kind;
    n.gamma = Tensor<T>::full({static_cast<size_t>(channels)}, T(1), true);
    n.beta = Tensor<T>::zeros({static_cast<size_t>(channels)}, true);
    if (kind == NormKind::Batch) {
        n.running_mean = Tensor<T>::zeros({static_cast<size_t>(channels)});
        n.running_var = Tensor<T>::full({static_cast<size_t>(channels)}, T(1));
    }
    return n;
}

} // namespace detail

// Builds the model structure with zero weights / identity norms. The caller
// fills weights (model_init draws them; load_model reads them from disk).
template <typename T>
SSAAFormerModel<T> build_model_structure(const ModelConfig& config) {
    config.validate();
    SSAAFormerModel<T> m;
    m.config = config;
    const auto& ch = config.stage_channels;
    const auto res = config.stage_resolutions();
    const int e = config.ffn_expansion;

    auto conv_w = [](int cout, int cin_g, int k) {
        return Tensor<T>::zeros({static_cast<size_t>(cout), static_cast<size_t>(cin_g),
                                 static_cast<size_t>(k), static_cast<size_t>(k)},
                                true);
    };
    auto vec_b = [](int c) { return Tensor<T>::zeros({static_cast<size_t>(c)}, true); };

    // patch embeddings: 4x4 stride-4 into stage 1, then 2x2 stride-2 between
    // stages (1x1 stride-1 once spatial size has saturated at 1)
    for (int s = 0; s < 4; ++s) {
        PatchEmbed<T>& pe = m.embeds[s];
        const int cin = s == 0 ? config.in_channels : ch[s - 1];
        if (s == 0) {
            pe.kernel = 4;
            pe.stride = 4;
        } else {
            const int incoming = res[s - 1];
            pe.kernel = incoming > 1 ? 2 : 1;
            pe.stride = pe.kernel;
        }
        pe.weight = conv_w(ch[s], cin, pe.kernel);
        pe.bias = vec_b(ch[s]);
        pe.norm = detail::make_norm<T>(s < 2 ? NormKind::Batch : NormKind::TokenLayer, ch[s]);
    }

    auto make_conv_block = [&](int c, bool use_ssaa) {
        ConvBlock<T> b;
        b.dpe_weight = conv_w(c, 1, config.dpe_kernel);
        b.dpe_bias = vec_b(c);
        b.norm1 = detail::make_norm<T>(NormKind::Batch, c);
        b.pw1_weight = conv_w(c, c, 1);
        b.pw1_bias = vec_b(c);
        b.dw_weight = conv_w(c, 1, config.dw_kernel);
        b.dw_bias = vec_b(c);
        b.use_ssaa = use_ssaa;
        if (use_ssaa) {
            b.w1 = Tensor<T>::scalar(T(1), true);
            b.w2 = Tensor<T>::scalar(T(0), true);
        }
        b.pw2_weight = conv_w(c, c, 1);
        b.pw2_bias = vec_b(c);
        b.norm2 = detail::make_norm<T>(NormKind::Batch, c);
        b.ffn1_weight = conv_w(c * e, c, 1);
        b.ffn1_bias = vec_b(c * e);
        b.ffn2_weight = conv_w(c, c * e, 1);
        b.ffn2_bias = vec_b(c);
        return b;
    };
    auto make_attn_block = [&](int c) {
        AttnBlock<T> b;
        b.heads = config.heads_per_stage34;
        b.dpe_weight = conv_w(c, 1, config.dpe_kernel);
        b.dpe_bias = vec_b(c);
        b.ln1_gamma = Tensor<T>::full({static_cast<size_t>(c)}, T(1), true);
        b.ln1_beta = vec_b(c);
        auto lin_w = [&](int cin, int cout) {
            return Tensor<T>::zeros({static_cast<size_t>(cin), static_cast<size_t>(cout)}, true);
        };
        b.wq = lin_w(c, c);
        b.bq = vec_b(c);
        b.wk = lin_w(c, c);
        b.bk = vec_b(c);
        b.wv = lin_w(c, c);
        b.bv = vec_b(c);
        b.wo = lin_w(c, c);
        b.bo = vec_b(c);
        b.ln2_gamma = Tensor<T>::full({static_cast<size_t>(c)}, T(1), true);
        b.ln2_beta = vec_b(c);
        b.ffn1_weight = lin_w(c, c * e);
        b.ffn1_bias = vec_b(c * e);
        b.ffn2_weight = lin_w(c * e, c);
        b.ffn2_bias = vec_b(c);
        return b;
    };

    for (int i = 0; i < config.stage_depths[0]; ++i)
        m.stage1.push_back(make_conv_block(ch[0], i < config.ssaa_blocks));
    for (int i = 0; i < config.stage_depths[1]; ++i) m.stage2.push_back(make_conv_block(ch[1], false));
    for (int i = 0; i < config.stage_depths[2]; ++i) m.stage3.push_back(make_attn_block(ch[2]));
    for (int i = 0; i < config.stage_depths[3]; ++i) m.stage4.push_back(make_attn_block(ch[3]));

    m.head_weight = Tensor<T>::zeros({static_cast<size_t>(ch[3]), 1}, true);
    m.head_bias = Tensor<T>::zeros({1}, true);
    return m;
}

// Deterministic initialization: conv/linear weights ~ truncated normal
// (std 0.02), biases 0, norm gammas 1, SSAA pairs (w1,w2)=(1,0). Scalar and
// constant parameters consume no RNG draws, so models that differ only in
// ssaa_blocks share identical conv/linear weights for the same seed.
template <typename T>
SSAAFormerModel<T> model_init(const ModelConfig& config) {
    SSAAFormerModel<T> m = build_model_structure<T>(config);
    SplitMix64 rng(derive_seed(config.seed, /*stream=*/1));
    visit_named_tensors(m, [&](const std::string& name, Tensor<T>& t, bool trainable) {
        if (!trainable) return;
        const bool is_weight = name.ends_with(".weight") || name.ends_with(".wq") ||
                               name.ends_with(".wk") || name.ends_with(".wv") ||
                               name.ends_with(".wo");
        if (!is_weight) return;  // biases stay 0, gammas stay 1, w1/w2 stay (1,0)
        for (size_t i = 0; i < t.numel(); ++i)
            t.data()[i] = static_cast<T>(rng.next_trunc_normal(0.02));
    });
    return m;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

// w1*A + w2*hflip(A): mixes a feature map with its horizontal mirror.
template <typename T>
Tensor<T> ssaa(const Tensor<T>& a, const Tensor<T>& w1, const Tensor<T>& w2) {
    return add(scale(a, w1), scale(hflip(a), w2));
}

namespace detail {

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, NormParams<T>& n, bool training) {
    if (n.kind == NormKind::Batch)
        return batchnorm2d(x, n.gamma, n.beta, n.running_mean, n.running_var, training,
                           T(kBatchNormMomentum), T(kBatchNormEps));
    // token-wise layer norm on NCHW: normalize over C at each spatial site
    auto t = permute(x, {0, 2, 3, 1});
    t = layernorm(t, n.gamma, n.beta, T(kLayerNormEps));
    return permute(t, {0, 3, 1, 2});
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x2d, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(matmul(x2d, w), b);
}

} // namespace detail

template <typename T>
Tensor<T> conv_block_forward(const Tensor<T>& input, ConvBlock<T>& b, bool training) {
    const size_t c = input.dim(1);
    if (b.pw1_weight.dim(1) != c)
        throw DimensionError("conv block expects " + std::to_string(b.pw1_weight.dim(1)) +
                             " channels, got " + std::to_string(c));
    const int dpe_pad = static_cast<int>(b.dpe_weight.dim(2)) / 2;
    const int dw_pad = static_cast<int>(b.dw_weight.dim(2)) / 2;
    auto x = add(input, conv2d(input, b.dpe_weight, b.dpe_bias, 1, dpe_pad, static_cast<int>(c)));
    auto t = detail::apply_norm(x, b.norm1, training);
    t = conv2d(t, b.pw1_weight, b.pw1_bias, 1, 0, 1);
    t = conv2d(t, b.dw_weight, b.dw_bias, 1, dw_pad, static_cast<int>(c));
    if (b.use_ssaa) t = ssaa(t, b.w1, b.w2);
    t = conv2d(t, b.pw2_weight, b.pw2_bias, 1, 0, 1);
    x = add(x, t);
    auto fx = detail::apply_norm(x, b.norm2, training);
    fx = conv2d(fx, b.ffn1_weight, b.ffn1_bias, 1, 0, 1);
    fx = gelu(fx);
    fx = conv2d(fx, b.ffn2_weight, b.ffn2_bias, 1, 0, 1);
    return add(x, fx);
}

// softmax(Q K^T / sqrt(d_k)) V per head over row-major spatial tokens.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& tokens, const Tensor<T>& wq, const Tensor<T>& bq,
                               const Tensor<T>& wk, const Tensor<T>& bk, const Tensor<T>& wv,
                               const Tensor<T>& bv, const Tensor<T>& wo, const Tensor<T>& bo,
                               int heads) {
    const size_t n = tokens.dim(0), t = tokens.dim(1), c = tokens.dim(2);
    if (c % static_cast<size_t>(heads) != 0)
        throw DimensionError("attention: channels " + std::to_string(c) +
                             " not divisible by heads " + std::to_string(heads));
    const size_t dk = c / static_cast<size_t>(heads);
    const size_t h = static_cast<size_t>(heads);
    auto flat = reshape(tokens, {n * t, c});
    auto split = [&](const Tensor<T>& w, const Tensor<T>& bias) {
        auto proj = detail::linear(flat, w, bias);              // [N*T, C]
        return permute(reshape(proj, {n, t, h, dk}), {0, 2, 1, 3});  // [N, H, T, dk]
    };
    auto q = split(wq, bq);
    auto k = split(wk, bk);
    auto v = split(wv, bv);
    auto logits = matmul(q, permute(k, {0, 1, 3, 2}));          // [N, H, T, T]
    logits = cmul(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    auto attn = softmax(logits, -1);
    auto ctx = matmul(attn, v);                                 // [N, H, T, dk]
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {n * t, c});
    return reshape(detail::linear(merged, wo, bo), {n, t, c});
}

template <typename T>
Tensor<T> attention_block_forward(const Tensor<T>& input, AttnBlock<T>& b) {
    const size_t n = input.dim(0), c = input.dim(1), hh = input.dim(2), ww = input.dim(3);
    if (b.wq.dim(0) != c)
        throw DimensionError("attention block expects " + std::to_string(b.wq.dim(0)) +
                             " channels, got " + std::to_string(c));
    const int dpe_pad = static_cast<int>(b.dpe_weight.dim(2)) / 2;
    auto x = add(input, conv2d(input, b.dpe_weight, b.dpe_bias, 1, dpe_pad, static_cast<int>(c)));
    const size_t t = hh * ww;
    auto tok = permute(reshape(x, {n, c, t}), {0, 2, 1});  // [N, T, C] row-major spatial order
    auto normed = layernorm(tok, b.ln1_gamma, b.ln1_beta, T(kLayerNormEps));
    auto attn = multi_head_attention(normed, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.heads);
    tok = add(tok, attn);
    auto f = layernorm(tok, b.ln2_gamma, b.ln2_beta, T(kLayerNormEps));
    auto f2 = reshape(f, {n * t, c});
    f2 = detail::linear(f2, b.ffn1_weight, b.ffn1_bias);
    f2 = gelu(f2);
    f2 = detail::linear(f2, b.ffn2_weight, b.ffn2_bias);
    tok = add(tok, reshape(f2, {n, t, c}));
    return reshape(permute(tok, {0, 2, 1}), {n, c, hh, ww});
}

template <typename T>
struct ModelOutput {
    Tensor<T> embedding;  // [N, c4]
    Tensor<T> score;      // [N], unclamped
};

// When taps is non-null it receives the output of every block in order
// (stage 1 first), used by the feature-map dump command.
template <typename T>
ModelOutput<T> model_forward(SSAAFormerModel<T>& m, const Tensor<T>& images, bool training,
                             std::vector<Tensor<T>>* taps = nullptr) {
    if (images.ndim() != 4 || images.dim(1) != static_cast<size_t>(m.config.in_channels) ||
        images.dim(2) != static_cast<size_t>(m.config.input_size) ||
        images.dim(3) != static_cast<size_t>(m.config.input_size))
        throw DimensionError("model_forward: expected [N," + std::to_string(m.config.in_channels) +
                             "," + std::to_string(m.config.input_size) + "," +
                             std::to_string(m.config.input_size) + "], got " +
                             shape_str(images.shape()));
    auto x = images;
    for (int s = 0; s < 4; ++s) {
        PatchEmbed<T>& pe = m.embeds[s];
        x = conv2d(x, pe.weight, pe.bias, pe.stride, 0, 1);
        x = detail::apply_norm(x, pe.norm, training);
        if (s < 2) {
            auto& blocks = s == 0 ? m.stage1 : m.stage2;
            for (auto& b : blocks) {
                x = conv_block_forward(x, b, training);
                if (taps) taps->push_back(x);
            }
        } else {
            auto& blocks = s == 2 ? m.stage3 : m.stage4;
            for (auto& b : blocks) {
                x = attention_block_forward(x, b);
                if (taps) taps->push_back(x);
            }
        }
    }
    ModelOutput<T> out;
    out.embedding = global_avg_pool(x);  // [N, c4]
    auto s2d = detail::linear(out.embedding, m.head_weight, m.head_bias);  // [N,1]
    out.score = reshape(s2d, {out.embedding.dim(0)});
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: magic "SSAF", version 1, named f32 tensors, CRC32 of the
// concatenated payload bytes. The config rides along as a pseudo-tensor so a
// file is self-describing.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<float> encode_config(const ModelConfig& c) {
    std::vector<float> v = {
        static_cast<float>(c.in_channels),      static_cast<float>(c.input_size),
        static_cast<float>(c.stage_depths[0]),  static_cast<float>(c.stage_depths[1]),
        static_cast<float>(c.stage_depths[2]),  static_cast<float>(c.stage_depths[3]),
        static_cast<float>(c.stage_channels[0]), static_cast<float>(c.stage_channels[1]),
        static_cast<float>(c.stage_channels[2]), static_cast<float>(c.stage_channels[3]),
        static_cast<float>(c.ssaa_blocks),      static_cast<float>(c.heads_per_stage34),
        static_cast<float>(c.ffn_expansion),    static_cast<float>(c.dw_kernel),
        static_cast<float>(c.dpe_kernel),
    };
    // seed as four 16-bit chunks (keeps every value exactly representable)
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>((c.seed >> (16 * i)) & 0xFFFF));
    return v;
}

inline ModelConfig decode_config(const std::vector<float>& v) {
    if (v.size() != 19) throw FormatError("model file: config record has wrong length");
    ModelConfig c;
    c.in_channels = static_cast<int>(v[0]);
    c.input_size = static_cast<int>(v[1]);
    for (int i = 0; i < 4; ++i) c.stage_depths[i] = static_cast<int>(v[2 + i]);
    for (int i = 0; i < 4; ++i) c.stage_channels[i] = static_cast<int>(v[6 + i]);
    c.ssaa_blocks = static_cast<int>(v[10]);
    c.heads_per_stage34 = static_cast<int>(v[11]);
    c.ffn_expansion = static_cast<int>(v[12]);
    c.dw_kernel = static_cast<int>(v[13]);
    c.dpe_kernel = static_cast<int>(v[14]);
    uint64_t seed = 0;
    for (int i = 0; i < 4; ++i) seed |= static_cast<uint64_t>(v[15 + i]) << (16 * i);
    c.seed = seed;
    return c;
}

} // namespace detail

inline void save_model(SSAAFormerModel<float>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    BinWriter w(os);

    auto cfg = detail::encode_config(m.config);
    std::vector<std::tuple<std::string, Shape, const float*, size_t>> records;
    records.emplace_back("config", Shape{cfg.size()}, cfg.data(), cfg.size());
    visit_named_tensors(m, [&](const std::string& name, Tensor<float>& t, bool) {
        records.emplace_back(name, t.shape(), t.data(), t.numel());
    });

    w.bytes("SSAF", 4);
    w.u32(1);  // version
    w.u32(static_cast<uint32_t>(records.size()));
    Crc32 crc;
    for (const auto& [name, shape, data, count] : records) {
        w.str(name);
        w.u32(static_cast<uint32_t>(shape.size()));
        for (size_t d : shape) w.u32(static_cast<uint32_t>(d));
        for (size_t i = 0; i < count; ++i) w.f32(data[i]);
        crc.update(data, count * sizeof(float));
    }
    w.u32(crc.value());
    if (!w.good()) throw IoError("write failed for '" + path + "'");
}

inline SSAAFormerModel<float> load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    BinReader r(is, path);

    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::string(magic, 4) != "SSAF") throw FormatError(path + ": bad magic (not a model file)");
    const uint32_t version = r.u32("version");
    if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
    const uint32_t count = r.u32("tensor count");
    if (count == 0 || count > 1u << 20) throw FormatError(path + ": implausible tensor count");

    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
    std::vector<std::string> order;
    Crc32 crc;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(4096, "tensor name");
        const uint32_t rank = r.u32("rank of tensor '" + name + "'");
        if (rank > 8) throw FormatError(path + ": implausible rank for tensor '" + name + "'");
        Shape shape(rank);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = r.u32("dims of tensor '" + name + "'");
            if (shape[d] == 0 || shape[d] > 1u << 28)
                throw FormatError(path + ": bad dimension in tensor '" + name + "'");
            numel *= shape[d];
            if (numel > 1u << 30) throw FormatError(path + ": tensor '" + name + "' too large");
        }
        std::vector<float> data(numel);
        for (size_t k = 0; k < numel; ++k) data[k] = r.f32("tensor '" + name + "'");
        crc.update(data.data(), data.size() * sizeof(float));
        if (tensors.count(name)) throw FormatError(path + ": duplicate tensor '" + name + "'");
        order.push_back(name);
        tensors.emplace(name, std::make_pair(std::move(shape), std::move(data)));
    }
    const uint32_t stored_crc = r.u32("checksum");
    if (stored_crc != crc.value()) throw FormatError(path + ": payload checksum mismatch");

    auto cfg_it = tensors.find("config");
    if (cfg_it == tensors.end()) throw FormatError(path + ": missing config record");
    ModelConfig config = detail::decode_config(cfg_it->second.second);

    SSAAFormerModel<float> m = build_model_structure<float>(config);
    size_t used = 1;  // config record
    visit_named_tensors(m, [&](const std::string& name, Tensor<float>& t, bool) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError(path + ": missing tensor '" + name + "'");
        if (it->second.first != t.shape())
            throw FormatError(path + ": tensor '" + name + "' has shape " +
                              shape_str(it->second.first) + ", expected " + shape_str(t.shape()));
        std::copy(it->second.second.begin(), it->second.second.end(), t.data());
        ++used;
    });
    if (used != tensors.size())
        throw FormatError(path + ": file contains tensors unknown to this architecture");
    return m;
}

} // namespace deepfidelity
