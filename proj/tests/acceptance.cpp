// Acceptance suite: nine pipeline-level criteria, one PASS/FAIL line each.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deepfidelity/gradcheck.hpp"
#include "deepfidelity/metrics.hpp"
#include "deepfidelity/model.hpp"
#include "deepfidelity/pipeline.hpp"
#include "deepfidelity/svr.hpp"
#include "deepfidelity/synth.hpp"
#include "qp_oracle.hpp"
#include "test_util.hpp"

using namespace deepfidelity;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %d. %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void symmetrize_width(Tensor<T>& t) {
    const size_t w = t.shape().back();
    const size_t rows = t.numel() / w;
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < w / 2; ++j)
            t.data()[r * w + (w - 1 - j)] = t.data()[r * w + j];
}

// ---- criterion 1: gradient suite --------------------------------------

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 rng(1001);
    double worst_op = 0;
    auto track = [&](double e) { worst_op = std::max(worst_op, e); };

    {  // conv2d (plain, strided, depthwise; includes N=1 and C=1 shapes)
        auto x = random_tensor<double>({1, 1, 6, 6}, rng, -1, 1, true);
        auto k = random_tensor<double>({2, 1, 3, 3}, rng, -0.5, 0.5, true);
        auto b = random_tensor<double>({2}, rng, -0.2, 0.2, true);
        std::vector<Tensor<double>> in = {x, k, b};
        track(grad_check([&] {
            auto y = conv2d(in[0], in[1], in[2], 1, 1, 1);
            return mean(mul(y, y));
        }, in));
    }
    {
        auto x = random_tensor<double>({2, 4, 6, 6}, rng, -1, 1, true);
        auto k = random_tensor<double>({4, 1, 3, 3}, rng, -0.5, 0.5, true);
        std::vector<Tensor<double>> in = {x, k};
        track(grad_check([&] { return sum(conv2d<double>(in[0], in[1], nullptr, 2, 1, 4)); }, in));
    }
    {  // hflip
        auto x = random_tensor<double>({2, 3, 5}, rng, -1, 1, true);
        std::vector<Tensor<double>> in = {x};
        track(grad_check([&] { return sum(mul(hflip(in[0]), hflip(in[0]))); }, in));
    }
    {  // matmul (batched)
        auto a = random_tensor<double>({2, 3, 4}, rng, -1, 1, true);
        auto b = random_tensor<double>({2, 4, 3}, rng, -1, 1, true);
        std::vector<Tensor<double>> in = {a, b};
        track(grad_check([&] {
            auto m = matmul(in[0], in[1]);
            return mean(mul(m, m));
        }, in));
    }
    {  // softmax
        auto x = random_tensor<double>({2, 5, 3}, rng, -2, 2, true);
        auto w = random_tensor<double>({2, 5, 3}, rng, -1, 1, false);
        std::vector<Tensor<double>> in = {x};
        track(grad_check([&] { return sum(mul(softmax(in[0], 1), w)); }, in));
    }
    {  // batchnorm2d, training and eval
        auto x = random_tensor<double>({2, 2, 3, 3}, rng, -1, 1, true);
        auto g = random_tensor<double>({2}, rng, 0.5, 1.5, true);
        auto b = random_tensor<double>({2}, rng, -0.5, 0.5, true);
        std::vector<Tensor<double>> in = {x, g, b};
        for (bool training : {true, false}) {
            track(grad_check([&] {
                auto rm = Tensor<double>::zeros({2});
                auto rv = Tensor<double>::full({2}, 1.0);
                auto y = batchnorm2d(in[0], in[1], in[2], rm, rv, training, 0.1, 1e-5);
                return mean(mul(y, y));
            }, in));
        }
    }
    {  // layernorm
        auto x = random_tensor<double>({4, 6}, rng, -1, 1, true);
        auto g = random_tensor<double>({6}, rng, 0.5, 1.5, true);
        auto b = random_tensor<double>({6}, rng, -0.5, 0.5, true);
        std::vector<Tensor<double>> in = {x, g, b};
        track(grad_check([&] { return mean(mul(layernorm(in[0], in[1], in[2], 1e-6),
                                               layernorm(in[0], in[1], in[2], 1e-6))); }, in));
    }
    {  // gelu
        auto x = random_tensor<double>({4, 4}, rng, -2, 2, true);
        std::vector<Tensor<double>> in = {x};
        track(grad_check([&] { return sum(gelu(in[0])); }, in));
    }
    {  // global_avg_pool, scale, add_bias
        auto x = random_tensor<double>({1, 1, 4, 4}, rng, -1, 1, true);
        auto s = Tensor<double>::scalar(0.7, true);
        std::vector<Tensor<double>> in = {x, s};
        track(grad_check([&] {
            auto y = scale(global_avg_pool(in[0]), in[1]);
            return mean(mul(y, y));
        }, in));
    }

    // end-to-end on the tiny model
    ModelConfig tiny;
    tiny.input_size = 16;
    tiny.stage_depths = {1, 1, 1, 1};
    tiny.stage_channels = {4, 4, 8, 8};
    tiny.ssaa_blocks = 1;
    tiny.heads_per_stage34 = 2;
    tiny.seed = 2024;
    auto model = model_init<double>(tiny);
    auto x = random_tensor<double>({2, 3, 16, 16}, rng, 0, 1);
    auto target = random_tensor<double>({2}, rng, 0, 1);
    auto params = model.parameters();
    const double e2e = grad_check([&] {
        auto out = model_forward(model, x, true);
        auto d = sub(out.score, target);
        return mean(mul(d, d));
    }, params);

    const double elapsed = seconds_since(t0);
    char detail[160];
    std::snprintf(detail, sizeof(detail), "op max err %.2e (<1e-5), end-to-end %.2e (<1e-4), %.1fs (<60s)",
                  worst_op, e2e, elapsed);
    report(1, "gradient suite", worst_op < 1e-5 && e2e < 1e-4 && elapsed < 60.0, detail);
}

// ---- criterion 2: SSAA reduction ---------------------------------------

void criterion2() {
    ModelConfig cfg;
    cfg.seed = 314;
    auto with_ssaa = model_init<float>(cfg);
    ModelConfig base_cfg = cfg;
    base_cfg.ssaa_blocks = 0;
    auto baseline = model_init<float>(base_cfg);  // identical weights for the same seed

    SplitMix64 rng(315);
    double worst = 0;
    for (int rep = 0; rep < 10; ++rep) {
        auto x = random_tensor<float>({1, 3, 32, 32}, rng, -1, 1);
        auto a = model_forward(with_ssaa, x, false);
        auto b = model_forward(baseline, x, false);
        worst = std::max(worst, max_abs_diff(a.score, b.score));
        worst = std::max(worst, max_abs_diff(a.embedding, b.embedding));
    }
    char detail[120];
    std::snprintf(detail, sizeof(detail), "max |w2=0 - baseline| %.2e (<1e-6) over 10 inputs", worst);
    report(2, "SSAA reduction", worst <= 1e-6, detail);
}

// ---- criterion 3: symmetry invariant ------------------------------------

void criterion3() {
    ModelConfig cfg;
    cfg.seed = 2718;
    auto m = model_init<float>(cfg);
    ConvBlock<float>& blk = m.stage1[0];
    symmetrize_width(blk.dw_weight);

    SplitMix64 rng(2719);
    auto x = random_tensor<float>({2, 16, 8, 8}, rng, -1, 1);
    symmetrize_width(x);

    // A(X) per the stage-1 local attention path: DWConv(PWConv1(Norm(X)))
    NoGradGuard ng;
    auto t = batchnorm2d(x, blk.norm1.gamma, blk.norm1.beta, blk.norm1.running_mean,
                         blk.norm1.running_var, true, kBatchNormMomentum, kBatchNormEps);
    t = conv2d(t, blk.pw1_weight, blk.pw1_bias, 1, 0, 1);
    auto a = conv2d(t, blk.dw_weight, blk.dw_bias, 1, 2, 16);

    auto w1 = Tensor<float>::scalar(0.7f);
    auto w2 = Tensor<float>::scalar(0.4f);
    auto mixed = ssaa(a, w1, w2);
    auto expected = cmul(a, 1.1f);  // (w1 + w2) * A(X)
    const double worst = max_abs_diff(mixed, expected);
    char detail[120];
    std::snprintf(detail, sizeof(detail), "max |ssaa - (w1+w2)A| %.2e (<1e-5)", worst);
    report(3, "symmetry invariant", worst < 1e-5, detail);
}

// ---- criterion 4: SVR-oracle equivalence --------------------------------

void criterion4() {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 rng(4242);
    double worst_gap = 0, worst_kkt = 0;
    for (int rep = 0; rep < 25; ++rep) {
        const size_t n = 5 + rng.next_below(16);
        const size_t d = 1 + rng.next_below(4);
        std::vector<std::vector<double>> xs(n, std::vector<double>(d));
        std::vector<double> y(n);
        for (auto& row : xs)
            for (auto& v : row) v = rng.next_uniform(-2, 2);
        for (auto& v : y) v = rng.next_uniform(-1, 1);

        SVRTrainConfig cfg;
        cfg.C = rng.next_uniform(0.5, 4.0);
        cfg.epsilon = rng.next_uniform(0.01, 0.1);
        cfg.tolerance = 1e-6;  // run the solver to tight convergence for the compare
        cfg.max_passes = 2000;
        SVRFitInfo info;
        auto m = svr_fit(xs, y, cfg, &info);

        std::vector<std::vector<double>> std_xs(n);
        for (size_t i = 0; i < n; ++i) std_xs[i] = m.standardize(xs[i]);
        auto kernel = gram_matrix(std_xs, m.sigma);
        auto pg = qporacle::solve_svr_dual_pg(kernel, y, cfg.C, cfg.epsilon);
        const double obj_smo =
            qporacle::svr_dual_objective(kernel, y, cfg.C, cfg.epsilon, info.alphas);
        worst_gap = std::max(worst_gap, std::abs(obj_smo - pg.objective));
        worst_kkt = std::max(worst_kkt, kkt_report(m, xs, y, cfg));
    }
    const double elapsed = seconds_since(t0);
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "obj gap %.2e (<1e-4), KKT %.2e (<1e-3), %.1fs (<30s), 25 problems", worst_gap,
                  worst_kkt, elapsed);
    report(4, "SVR-oracle equivalence", worst_gap < 1e-4 && worst_kkt < 1e-3 && elapsed < 30.0,
           detail);
}

// ---- criterion 5: kernel and Gram properties -----------------------------

void criterion5() {
    SplitMix64 rng(555);
    bool diag_exact = true, sym_exact = true;
    double min_eig = 1.0;
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::vector<double>> xs(8, std::vector<double>(3));
        for (auto& row : xs)
            for (auto& v : row) v = rng.next_uniform(-3, 3);
        const double sigma = rng.next_uniform(0.3, 3.0);
        auto k = gram_matrix(xs, sigma);
        for (size_t i = 0; i < 8; ++i) {
            if (k[i][i] != 1.0) diag_exact = false;
            if (rbf_kernel(xs[i], xs[i], sigma) != 1.0) diag_exact = false;
            for (size_t j = 0; j < 8; ++j)
                if (k[i][j] != k[j][i]) sym_exact = false;
        }
        auto eig = qporacle::symmetric_eigenvalues_jacobi(k);
        min_eig = std::min(min_eig, *std::min_element(eig.begin(), eig.end()));
    }
    char detail[140];
    std::snprintf(detail, sizeof(detail),
                  "K(x,x)=1 %s, symmetry %s, min eig %.2e (>=-1e-8), 20 sets", diag_exact ? "exact" : "BROKEN",
                  sym_exact ? "exact" : "BROKEN", min_eig);
    report(5, "kernel/Gram properties", diag_exact && sym_exact && min_eig >= -1e-8, detail);
}

// ---- criterion 6: AUC exactness ------------------------------------------

void criterion6() {
    SplitMix64 rng(666);
    bool exact = true;
    for (int rep = 0; rep < 100 && exact; ++rep) {
        const size_t n = 2 + rng.next_below(199);
        std::vector<double> scores(n);
        std::vector<Label> labels(n);
        bool has_r = false, has_f = false;
        for (size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.next_below(23)) / 22.0;  // forces ties
            labels[i] = rng.next_below(2) == 0 ? Label::Real : Label::Fake;
            (labels[i] == Label::Real ? has_r : has_f) = true;
        }
        if (!has_r) labels[0] = Label::Real;
        if (!has_f) labels[n - 1] = Label::Fake;

        double wins = 0;
        size_t pairs = 0;
        for (size_t i = 0; i < n; ++i) {
            if (labels[i] != Label::Real) continue;
            for (size_t j = 0; j < n; ++j) {
                if (labels[j] != Label::Fake) continue;
                ++pairs;
                if (scores[i] > scores[j])
                    wins += 1.0;
                else if (scores[i] == scores[j])
                    wins += 0.5;
            }
        }
        if (auc(scores, labels) != wins / static_cast<double>(pairs)) exact = false;
    }
    report(6, "AUC exactness", exact,
           exact ? "matches brute-force pairwise oracle exactly on 100 sets"
                 : "mismatch against brute-force oracle");
}

// ---- criterion 7: fidelity mapping ----------------------------------------

void criterion7() {
    bool endpoints = map_to_fidelity(0.0, Label::Real) == 0.6 &&
                     map_to_fidelity(1.0, Label::Real) == 1.0 &&
                     map_to_fidelity(0.0, Label::Fake) == 0.0 &&
                     map_to_fidelity(1.0, Label::Fake) == 0.4;
    SplitMix64 rng(777);
    bool roundtrip = true;
    for (int i = 0; i < 1000; ++i) {
        const double q = rng.next_double();
        const Label l = rng.next_below(2) == 0 ? Label::Real : Label::Fake;
        if (threshold_classify(map_to_fidelity(q, l)) != l) roundtrip = false;
    }
    report(7, "fidelity mapping", endpoints && roundtrip,
           endpoints ? (roundtrip ? "endpoints 0.6/1.0 and 0.0/0.4 attained; classify-map identity on 1000 pairs"
                                  : "classify-map round trip broken")
                     : "endpoint values wrong");
}

// ---- criteria 8 and 9: desk experiment + determinism ----------------------

struct PipelineRun {
    std::string model_bytes;
    std::string svr_bytes;
    std::string report_kv;
    EvalReport report;
    double initial_loss = 0, final_loss = 0;
    double elapsed = 0;
};

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

PipelineRun run_pipeline(const std::string& dir, uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::remove_all(dir);

    SynthConfig synth;
    synth.n_real = 200;
    synth.n_fake = 200;
    synth.image_size = 32;
    synth.seed = seed;
    auto train_manifest = gen_synthetic(synth, dir + "/train");
    SynthConfig test_synth = synth;
    test_synth.n_real = 50;
    test_synth.n_fake = 50;
    test_synth.seed = seed + 1;
    auto test_manifest = gen_synthetic(test_synth, dir + "/test");

    auto train_records = read_manifest(train_manifest);
    auto stats = compute_quality_stats(train_records);
    map_records(train_records, stats);
    auto test_records = read_manifest(test_manifest);
    map_records(test_records, stats);  // test reuses training stats

    ModelConfig cfg;  // desk defaults: 32px, [5,2,2,2], [16,32,64,128], ssaa 5
    cfg.seed = seed;
    auto model = model_init<float>(cfg);
    TrainOptions opts;
    opts.epochs = 15;
    auto train_result = train_backbone(model, train_records, opts);
    save_model(model, dir + "/model.ssaf");

    auto rows = extract_features(model, train_records);
    std::vector<std::vector<double>> feats;
    std::vector<double> targets;
    for (const auto& r : rows) {
        feats.emplace_back(r.embedding.begin(), r.embedding.end());
        targets.push_back(r.target);
    }
    SVRTrainConfig svr_cfg;  // defaults: C=1, eps=0.05, tol=1e-3, sigma=median
    svr_cfg.seed = seed;
    auto svr = svr_fit(feats, targets, svr_cfg);
    save_svr(svr, dir + "/svr.svrm");

    PipelineRun out;
    out.report = evaluate(model, svr, test_records);
    out.report_kv = out.report.to_kv();
    out.model_bytes = slurp(dir + "/model.ssaf");
    out.svr_bytes = slurp(dir + "/svr.svrm");
    out.initial_loss = train_result.epoch_losses.front();
    out.final_loss = train_result.epoch_losses.back();
    out.elapsed = seconds_since(t0);
    return out;
}

void criteria8and9() {
    auto run_a = run_pipeline("acceptance_run_a", 42);

    bool cells = true;
    for (int c = 0; c < 2; ++c)
        for (int b = 0; b < 4; ++b)
            if (run_a.report.bucket_count[c][b] == 0) cells = false;

    std::printf("--- per-quality-bucket report (seed 42, 400 train / 100 test) ---\n%s---\n",
                run_a.report.to_table().c_str());

    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "Acc %.3f (>=0.90), AUC %.3f (>=0.95), %.0fs (<600s), all 8 bucket cells %s",
                  run_a.report.accuracy, run_a.report.auc, run_a.elapsed,
                  cells ? "populated" : "NOT populated");
    report(8, "end-to-end desk experiment",
           run_a.report.accuracy >= 0.90 && run_a.report.auc >= 0.95 && run_a.elapsed < 600.0 &&
               cells,
           detail);

    auto run_b = run_pipeline("acceptance_run_b", 42);
    const bool same_model = run_a.model_bytes == run_b.model_bytes && !run_a.model_bytes.empty();
    const bool same_svr = run_a.svr_bytes == run_b.svr_bytes && !run_a.svr_bytes.empty();
    const bool same_report = run_a.report_kv == run_b.report_kv;
    std::snprintf(detail, sizeof(detail), "model bytes %s, svr bytes %s, eval report %s",
                  same_model ? "identical" : "DIFFER", same_svr ? "identical" : "DIFFER",
                  same_report ? "identical" : "DIFFER");
    report(9, "determinism", same_model && same_svr && same_report, detail);

    std::filesystem::remove_all("acceptance_run_a");
    std::filesystem::remove_all("acceptance_run_b");
}

} // namespace

int main() {
    std::printf("DeepFidelity acceptance suite\n");
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criteria8and9();
    if (g_failures == 0)
        std::printf("all criteria passed\n");
    else
        std::printf("%d criteria FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
