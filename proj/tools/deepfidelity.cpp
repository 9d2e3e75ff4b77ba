// deepfidelity: synthetic data generation, quality-to-fidelity mapping,
// backbone training, feature extraction, SVR fitting, scoring and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "deepfidelity/fidelity.hpp"
#include "deepfidelity/gradcheck.hpp"
#include "deepfidelity/image.hpp"
#include "deepfidelity/metrics.hpp"
#include "deepfidelity/model.hpp"
#include "deepfidelity/pipeline.hpp"
#include "deepfidelity/svr.hpp"
#include "deepfidelity/synth.hpp"

using namespace deepfidelity;

namespace {

ModelConfig config_from_flags(int input_size, const std::vector<int>& depths,
                              const std::vector<int>& channels, int ssaa_blocks, int heads,
                              int ffn_expansion, int dw_kernel, int dpe_kernel, uint64_t seed) {
    ModelConfig c;
    c.input_size = input_size;
    if (depths.size() != 4) throw ConfigError("--depths needs exactly 4 values");
    if (channels.size() != 4) throw ConfigError("--channels needs exactly 4 values");
    for (int i = 0; i < 4; ++i) {
        c.stage_depths[i] = depths[i];
        c.stage_channels[i] = channels[i];
    }
    c.ssaa_blocks = ssaa_blocks;
    c.heads_per_stage34 = heads;
    c.ffn_expansion = ffn_expansion;
    c.dw_kernel = dw_kernel;
    c.dpe_kernel = dpe_kernel;
    c.seed = seed;
    c.validate();
    return c;
}

int run_gradcheck() {
    SplitMix64 rng(911);
    auto rand_t = [&](Shape shape, double lo, double hi) {
        std::vector<double> d(shape_numel(shape));
        for (auto& v : d) v = rng.next_uniform(lo, hi);
        return Tensor<double>::from_data(std::move(shape), std::move(d), true);
    };
    struct Row {
        std::string name;
        double err;
        double limit;
    };
    std::vector<Row> rows;

    {
        auto x = rand_t({2, 3, 6, 6}, -1, 1);
        auto k = rand_t({4, 3, 3, 3}, -0.5, 0.5);
        auto b = rand_t({4}, -0.2, 0.2);
        std::vector<Tensor<double>> in = {x, k, b};
        rows.push_back({"conv2d", grad_check([&] {
            auto y = conv2d(in[0], in[1], in[2], 1, 1, 1);
            return mean(mul(y, y));
        }, in), 1e-5});
    }
    {
        auto x = rand_t({2, 4, 5, 5}, -1, 1);
        auto k = rand_t({4, 1, 3, 3}, -0.5, 0.5);
        std::vector<Tensor<double>> in = {x, k};
        rows.push_back({"conv2d depthwise", grad_check([&] {
            return sum(conv2d<double>(in[0], in[1], nullptr, 2, 1, 4));
        }, in), 1e-5});
    }
    {
        auto x = rand_t({2, 3, 4}, -1, 1);
        std::vector<Tensor<double>> in = {x};
        rows.push_back({"hflip", grad_check([&] {
            return sum(mul(hflip(in[0]), hflip(in[0])));
        }, in), 1e-5});
    }
    {
        auto a = rand_t({3, 4}, -1, 1);
        auto b = rand_t({4, 2}, -1, 1);
        std::vector<Tensor<double>> in = {a, b};
        rows.push_back({"matmul", grad_check([&] {
            auto m = matmul(in[0], in[1]);
            return mean(mul(m, m));
        }, in), 1e-5});
    }
    {
        auto x = rand_t({2, 5, 3}, -2, 2);
        std::vector<Tensor<double>> in = {x};
        auto w = rand_t({2, 5, 3}, -1, 1);
        w.set_requires_grad(false);
        rows.push_back({"softmax", grad_check([&] {
            return sum(mul(softmax(in[0], 1), w));
        }, in), 1e-5});
    }
    {
        auto x = rand_t({2, 2, 3, 3}, -1, 1);
        auto g = rand_t({2}, 0.5, 1.5);
        auto b = rand_t({2}, -0.5, 0.5);
        std::vector<Tensor<double>> in = {x, g, b};
        rows.push_back({"batchnorm2d", grad_check([&] {
            auto rm = Tensor<double>::zeros({2});
            auto rv = Tensor<double>::full({2}, 1.0);
            auto y = batchnorm2d(in[0], in[1], in[2], rm, rv, true, 0.1, 1e-5);
            return mean(mul(y, y));
        }, in), 1e-5});
    }
    {
        auto x = rand_t({4, 6}, -1, 1);
        auto g = rand_t({6}, 0.5, 1.5);
        auto b = rand_t({6}, -0.5, 0.5);
        std::vector<Tensor<double>> in = {x, g, b};
        rows.push_back({"layernorm", grad_check([&] {
            auto y = layernorm(in[0], in[1], in[2], 1e-6);
            return mean(mul(y, y));
        }, in), 1e-5});
    }
    {
        auto x = rand_t({4, 4}, -2, 2);
        std::vector<Tensor<double>> in = {x};
        rows.push_back({"gelu", grad_check([&] { return sum(gelu(in[0])); }, in), 1e-5});
    }
    {
        auto x = rand_t({2, 3, 4, 4}, -1, 1);
        std::vector<Tensor<double>> in = {x};
        rows.push_back({"global_avg_pool", grad_check([&] {
            auto y = global_avg_pool(in[0]);
            return mean(mul(y, y));
        }, in), 1e-5});
    }
    {
        ModelConfig c;
        c.input_size = 16;
        c.stage_depths = {1, 1, 1, 1};
        c.stage_channels = {4, 4, 8, 8};
        c.ssaa_blocks = 1;
        c.heads_per_stage34 = 2;
        c.seed = 99;
        auto m = model_init<double>(c);
        auto x = rand_t({2, 3, 16, 16}, 0, 1);
        x.set_requires_grad(false);
        auto target = rand_t({2}, 0, 1);
        target.set_requires_grad(false);
        std::vector<Tensor<double>> params = m.parameters();
        rows.push_back({"end-to-end tiny model", grad_check([&] {
            auto out = model_forward(m, x, true);
            auto d = sub(out.score, target);
            return mean(mul(d, d));
        }, params), 1e-4});
    }

    bool ok = true;
    for (const auto& r : rows) {
        const bool pass = r.err < r.limit;
        ok = ok && pass;
        std::printf("%-22s max rel err %.3e  (limit %.0e)  %s\n", r.name.c_str(), r.err, r.limit,
                    pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeepFidelity pipeline: SSAAFormer backbone + quality-mapped fidelity targets + RBF SVR"};
    app.require_subcommand(1);
    uint64_t seed = 42;
    app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset with manifest");
    std::string gen_out;
    SynthConfig synth;
    gen->add_option("--out-dir", gen_out, "output directory")->required();
    gen->add_option("--n-real", synth.n_real, "number of real samples")->required();
    gen->add_option("--n-fake", synth.n_fake, "number of fake samples")->required();
    gen->add_option("--image-size", synth.image_size)->capture_default_str();
    gen->add_option("--blur-levels", synth.blur_levels, "quality axis: per-sample blur sigmas")
        ->delimiter(',')
        ->capture_default_str();
    gen->add_option("--asymmetry", synth.asymmetry_strength, "forgery axis strength")
        ->capture_default_str();

    // ---- map-quality ----
    auto* mq = app.add_subcommand("map-quality",
                                  "normalize per-class quality and map to fidelity targets");
    std::string mq_manifest, mq_out, mq_stats_from;
    mq->add_option("--manifest", mq_manifest)->required();
    mq->add_option("--out", mq_out)->required();
    mq->add_option("--stats-from", mq_stats_from,
                   "manifest supplying normalization stats (training split)");

    // ---- model config flags (shared by train-backbone) ----
    auto* tb = app.add_subcommand("train-backbone", "train SSAAFormer on fidelity targets");
    std::string tb_manifest, tb_out, tb_loss_log;
    TrainOptions tb_opts;
    int tb_input = 32, tb_ssaa = 5, tb_heads = 4, tb_ffn = 4, tb_dw = 5, tb_dpe = 3;
    std::vector<int> tb_depths = {5, 2, 2, 2};
    std::vector<int> tb_channels = {16, 32, 64, 128};
    tb->add_option("--manifest", tb_manifest, "mapped training manifest")->required();
    tb->add_option("--out", tb_out, "output model path")->required();
    tb->add_option("--epochs", tb_opts.epochs)->capture_default_str();
    tb->add_option("--batch-size", tb_opts.batch_size)->capture_default_str();
    tb->add_option("--lr", tb_opts.lr)->capture_default_str();
    tb->add_option("--weight-decay", tb_opts.weight_decay)->capture_default_str();
    tb->add_flag("--hflip-augment", tb_opts.hflip_augment, "random horizontal flip augmentation");
    tb->add_option("--loss-log", tb_loss_log, "write per-epoch losses to this file");
    tb->add_option("--input-size", tb_input)->capture_default_str();
    tb->add_option("--depths", tb_depths, "blocks per stage")->delimiter(',')->capture_default_str();
    tb->add_option("--channels", tb_channels, "channels per stage")
        ->delimiter(',')
        ->capture_default_str();
    tb->add_option("--ssaa-blocks", tb_ssaa)->capture_default_str();
    tb->add_option("--heads", tb_heads)->capture_default_str();
    tb->add_option("--ffn-expansion", tb_ffn)->capture_default_str();
    tb->add_option("--dw-kernel", tb_dw)->capture_default_str();
    tb->add_option("--dpe-kernel", tb_dpe)->capture_default_str();

    // ---- extract-features ----
    auto* ef = app.add_subcommand("extract-features", "write backbone embeddings to CSV");
    std::string ef_model, ef_manifest, ef_out;
    ef->add_option("--model", ef_model)->required();
    ef->add_option("--manifest", ef_manifest)->required();
    ef->add_option("--out", ef_out)->required();

    // ---- train-svr ----
    auto* ts = app.add_subcommand("train-svr", "fit the epsilon-SVR on extracted features");
    std::string ts_features, ts_out, ts_sigma = "median";
    SVRTrainConfig ts_cfg;
    ts->add_option("--features", ts_features)->required();
    ts->add_option("--out", ts_out)->required();
    ts->add_option("-C,--C", ts_cfg.C)->capture_default_str();
    ts->add_option("--epsilon", ts_cfg.epsilon)->capture_default_str();
    ts->add_option("--tolerance", ts_cfg.tolerance)->capture_default_str();
    ts->add_option("--max-passes", ts_cfg.max_passes)->capture_default_str();
    ts->add_option("--sigma", ts_sigma, "kernel width or 'median'")->capture_default_str();

    // ---- score ----
    auto* sc = app.add_subcommand("score", "score images with backbone + SVR");
    std::string sc_model, sc_svr, sc_manifest, sc_image, sc_out;
    sc->add_option("--model", sc_model)->required();
    sc->add_option("--svr", sc_svr)->required();
    sc->add_option("--manifest", sc_manifest);
    sc->add_option("--image", sc_image);
    sc->add_option("--out", sc_out, "output CSV (default: stdout)");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate Acc, AUC and per-quality buckets");
    std::string ev_model, ev_svr, ev_manifest, ev_report;
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--svr", ev_svr)->required();
    ev->add_option("--manifest", ev_manifest, "mapped test manifest")->required();
    ev->add_option("--report", ev_report, "write key:value report to this file");

    // ---- gradcheck ----
    app.add_subcommand("gradcheck", "finite-difference verification of every differentiable op");

    // ---- dump-maps ----
    auto* dm = app.add_subcommand("dump-maps", "dump per-block channel-mean feature maps");
    std::string dm_model, dm_image, dm_out;
    int dm_blocks = 3;
    dm->add_option("--model", dm_model)->required();
    dm->add_option("--image", dm_image)->required();
    dm->add_option("--out-dir", dm_out)->required();
    dm->add_option("--n-blocks", dm_blocks)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            synth.seed = seed;
            const std::string manifest = gen_synthetic(synth, gen_out);
            std::printf("wrote %d images and %s\n", synth.n_real + synth.n_fake, manifest.c_str());
        } else if (mq->parsed()) {
            auto records = read_manifest(mq_manifest);
            const QualityStats stats = mq_stats_from.empty()
                                           ? compute_quality_stats(records)
                                           : compute_quality_stats(read_manifest(mq_stats_from));
            map_records(records, stats);
            write_manifest(mq_out, records);
            std::printf("mapped %zu records -> %s\n", records.size(), mq_out.c_str());
        } else if (tb->parsed()) {
            auto records = read_manifest(tb_manifest);
            auto config = config_from_flags(tb_input, tb_depths, tb_channels, tb_ssaa, tb_heads,
                                            tb_ffn, tb_dw, tb_dpe, seed);
            auto model = model_init<float>(config);
            auto result = train_backbone(model, records, tb_opts);
            save_model(model, tb_out);
            std::ofstream log;
            if (!tb_loss_log.empty()) {
                log.open(tb_loss_log);
                if (!log) throw IoError("cannot open loss log '" + tb_loss_log + "'");
            }
            for (size_t i = 0; i < result.epoch_losses.size(); ++i) {
                std::printf("epoch %zu loss %.6f\n", i + 1, result.epoch_losses[i]);
                if (log) log << i + 1 << " " << result.epoch_losses[i] << "\n";
            }
            std::printf("saved model -> %s\n", tb_out.c_str());
        } else if (ef->parsed()) {
            auto model = load_model(ef_model);
            auto records = read_manifest(ef_manifest);
            auto rows = extract_features(model, records);
            write_features(ef_out, rows);
            std::printf("wrote %zu feature rows -> %s\n", rows.size(), ef_out.c_str());
        } else if (ts->parsed()) {
            if (ts_sigma != "median") {
                try {
                    ts_cfg.sigma = std::stod(ts_sigma);
                } catch (const std::exception&) {
                    throw ConfigError("--sigma must be a number or 'median'");
                }
                if (ts_cfg.sigma <= 0) throw ConfigError("--sigma must be > 0");
            }
            ts_cfg.seed = seed;
            auto rows = read_features(ts_features);
            std::vector<std::vector<double>> feats;
            std::vector<double> targets;
            for (const auto& r : rows) {
                feats.emplace_back(r.embedding.begin(), r.embedding.end());
                targets.push_back(r.target);
            }
            SVRFitInfo info;
            auto svr = svr_fit(feats, targets, ts_cfg, &info);
            save_svr(svr, ts_out);
            std::printf("fitted SVR: %zu support vectors, sigma %.6g, bias %.6g, "
                        "dual objective %.6g, max violation %.3g (%d sweeps)\n",
                        svr.support_vectors.size(), svr.sigma, svr.bias, info.dual_objective,
                        info.final_violation, info.sweeps);
            std::printf("saved SVR -> %s\n", ts_out.c_str());
        } else if (sc->parsed()) {
            if (sc_manifest.empty() == sc_image.empty())
                throw ConfigError("score: provide exactly one of --manifest or --image");
            auto model = load_model(sc_model);
            auto svr = load_svr(sc_svr);
            std::ostream* os = &std::cout;
            std::ofstream file;
            if (!sc_out.empty()) {
                file.open(sc_out);
                if (!file) throw IoError("cannot open '" + sc_out + "' for writing");
                os = &file;
            }
            *os << "path,score,prediction\n";
            char buf[64];
            auto emit = [&](const std::string& path) {
                const double s = pipeline_score(model, svr, path);
                std::snprintf(buf, sizeof(buf), "%.6f", s);
                *os << path << ',' << buf << ',' << label_str(threshold_classify(s)) << "\n";
            };
            if (!sc_image.empty()) {
                emit(sc_image);
            } else {
                for (const auto& r : read_manifest(sc_manifest)) emit(r.image_path);
            }
        } else if (ev->parsed()) {
            auto model = load_model(ev_model);
            auto svr = load_svr(ev_svr);
            auto records = read_manifest(ev_manifest);
            auto report = evaluate(model, svr, records);
            std::fputs(report.to_table().c_str(), stdout);
            if (!ev_report.empty()) {
                std::ofstream os(ev_report);
                if (!os) throw IoError("cannot open report '" + ev_report + "'");
                os << report.to_kv();
            }
        } else if (app.get_subcommand("gradcheck")->parsed()) {
            return run_gradcheck();
        } else if (dm->parsed()) {
            auto model = load_model(dm_model);
            auto img = image_to_tensor(read_image(dm_image));
            img = resize_bilinear(img, model.config.input_size, model.config.input_size);
            for (size_t i = 0; i < img.numel(); ++i) img.data()[i] = (img.data()[i] - 0.5f) / 0.5f;
            auto written = dump_feature_maps(model, img, dm_out, dm_blocks);
            for (const auto& p : written) std::printf("%s\n", p.c_str());
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
