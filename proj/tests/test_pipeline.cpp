#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deepfidelity/image.hpp"
#include "deepfidelity/pipeline.hpp"
#include "deepfidelity/synth.hpp"
#include "test_util.hpp"

using namespace deepfidelity;

namespace {

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

// generated + mapped records in a scratch directory
std::vector<FidelityRecord> make_dataset(const std::string& dir, int n_real, int n_fake,
                                         uint64_t seed) {
    SynthConfig cfg;
    cfg.n_real = n_real;
    cfg.n_fake = n_fake;
    cfg.seed = seed;
    auto manifest = gen_synthetic(cfg, dir);
    auto rs = read_manifest(manifest);
    map_records(rs, compute_quality_stats(rs));
    return rs;
}

ModelConfig small_config(uint64_t seed) {
    ModelConfig c;
    c.stage_depths = {2, 1, 1, 1};
    c.stage_channels = {8, 16, 16, 32};
    c.ssaa_blocks = 2;
    c.seed = seed;
    return c;
}

} // namespace

TEST_CASE("train_backbone basic contracts") {
    auto rs = make_dataset("pipe_train_small", 4, 4, 3);
    auto model = model_init<float>(small_config(3));

    SUBCASE("one epoch yields one finite loss entry") {
        TrainOptions opts;
        opts.epochs = 1;
        opts.batch_size = 4;
        auto result = train_backbone(model, rs, opts);
        REQUIRE(result.epoch_losses.size() == 1);
        CHECK(std::isfinite(result.epoch_losses[0]));
    }
    SUBCASE("lr=0 leaves trainable parameters bitwise unchanged") {
        std::vector<std::vector<float>> before;
        for (auto& p : model.parameters()) before.push_back(p.values());
        TrainOptions opts;
        opts.epochs = 1;
        opts.batch_size = 4;
        opts.lr = 0.0f;
        opts.weight_decay = 0.0f;
        (void)train_backbone(model, rs, opts);
        auto params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i) CHECK(params[i].values() == before[i]);
    }
    SUBCASE("unmapped manifest is rejected") {
        auto raw = rs;
        for (auto& r : raw) r.mapped = false;
        TrainOptions opts;
        CHECK_THROWS_AS(train_backbone(model, raw, opts), DomainError);
    }
    SUBCASE("unreadable image names the file") {
        auto broken = rs;
        broken[0].image_path = "does_not_exist.ppm";
        TrainOptions opts;
        opts.epochs = 1;
        try {
            (void)train_backbone(model, broken, opts);
            CHECK(false);
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("does_not_exist.ppm") != std::string::npos);
        }
    }
    std::filesystem::remove_all("pipe_train_small");
}

TEST_CASE("desk fixture: ten epochs at least halve the training loss") {
    auto rs = make_dataset("pipe_desk_fixture", 100, 100, 42);
    ModelConfig cfg;  // desk defaults
    cfg.seed = 42;
    auto model = model_init<float>(cfg);
    TrainOptions opts;
    opts.epochs = 10;
    auto result = train_backbone(model, rs, opts);
    REQUIRE(result.epoch_losses.size() == 10);
    CHECK(result.epoch_losses.back() < 0.5 * result.epoch_losses.front());
    std::filesystem::remove_all("pipe_desk_fixture");
}

TEST_CASE("extract_features: row count, determinism, pure function") {
    auto rs = make_dataset("pipe_extract", 3, 3, 9);
    auto model = model_init<float>(small_config(9));

    auto rows = extract_features(model, rs);
    REQUIRE(rows.size() == rs.size());
    for (const auto& r : rows) CHECK(r.embedding.size() == 32);

    write_features("pipe_features_a.csv", rows);
    write_features("pipe_features_b.csv", extract_features(model, rs));
    CHECK(slurp("pipe_features_a.csv") == slurp("pipe_features_b.csv"));

    // duplicated input image yields identical embedding rows
    auto dup = rs;
    dup.push_back(rs[0]);
    auto rows2 = extract_features(model, dup);
    CHECK(rows2.back().embedding == rows2.front().embedding);

    // round trip through the CSV
    auto back = read_features("pipe_features_a.csv");
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].path == rows[i].path);
        CHECK(back[i].embedding == rows[i].embedding);
    }
    std::remove("pipe_features_a.csv");
    std::remove("pipe_features_b.csv");
    std::filesystem::remove_all("pipe_extract");
}

TEST_CASE("evaluate: constructed-correct fixture and arithmetic identities") {
    auto rs = make_dataset("pipe_eval", 4, 4, 21);
    auto model = model_init<float>(small_config(21));

    // SVR interpolates the evaluation set itself, so every prediction lands
    // within epsilon of its target and the report must be perfect
    auto rows = extract_features(model, rs);
    std::vector<std::vector<double>> feats;
    std::vector<double> targets;
    for (const auto& r : rows) {
        feats.emplace_back(r.embedding.begin(), r.embedding.end());
        targets.push_back(r.target);
    }
    SVRTrainConfig cfg;
    cfg.C = 100.0;
    cfg.epsilon = 0.01;
    cfg.tolerance = 1e-5;
    cfg.max_passes = 500;
    auto svr = svr_fit(feats, targets, cfg);

    auto report = evaluate(model, svr, rs);
    CHECK(report.accuracy == 1.0);
    CHECK(report.auc == 1.0);
    CHECK(report.n == rs.size());

    // bucket counts recombine to the overall accuracy exactly
    size_t total = 0, correct = 0;
    for (int c = 0; c < 2; ++c)
        for (int b = 0; b < 4; ++b) {
            total += report.bucket_count[c][b];
            correct += report.bucket_correct[c][b];
        }
    CHECK(total == report.n);
    CHECK(static_cast<double>(correct) / static_cast<double>(total) == report.accuracy);

    // record order invariance
    auto shuffled = rs;
    std::swap(shuffled[0], shuffled[5]);
    std::swap(shuffled[2], shuffled[7]);
    auto report2 = evaluate(model, svr, shuffled);
    CHECK(report2.accuracy == report.accuracy);
    CHECK(report2.auc == report.auc);
    CHECK(report2.bucket_count == report.bucket_count);
    CHECK(report2.bucket_correct == report.bucket_correct);

    std::filesystem::remove_all("pipe_eval");
}

TEST_CASE("dump_feature_maps writes normalized per-block maps") {
    auto model = model_init<float>(small_config(31));
    const int s = model.config.input_size;

    SUBCASE("n_blocks files, bounds checked") {
        SplitMix64 rng(1);
        auto img = testutil::random_tensor<float>(
            {3, static_cast<size_t>(s), static_cast<size_t>(s)}, rng, -1.0, 1.0);
        auto files = dump_feature_maps(model, img, "pipe_dumps", 3);
        REQUIRE(files.size() == 3);
        for (const auto& f : files) CHECK(std::filesystem::exists(f));
        CHECK_THROWS_AS(dump_feature_maps(model, img, "pipe_dumps", 99), DomainError);
        std::filesystem::remove_all("pipe_dumps");
    }
    SUBCASE("constant input renders mid-gray") {
        auto img = Tensor<float>::full({3, static_cast<size_t>(s), static_cast<size_t>(s)}, 0.0f);
        auto files = dump_feature_maps(model, img, "pipe_dumps_const", 2);
        for (const auto& f : files) {
            auto dumped = read_image(f);
            for (uint8_t p : dumped.pixels) CHECK(p == 128);
        }
        std::filesystem::remove_all("pipe_dumps_const");
    }
    SUBCASE("symmetric input with symmetric stage-1 kernels dumps symmetric") {
        auto sym_model = model_init<float>(small_config(32));
        auto symmetrize = [](Tensor<float>& t) {
            const size_t w = t.shape().back();
            const size_t rows = t.numel() / w;
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < w / 2; ++j)
                    t.data()[r * w + (w - 1 - j)] = t.data()[r * w + j];
        };
        symmetrize(sym_model.embeds[0].weight);
        for (auto& b : sym_model.stage1) {
            symmetrize(b.dpe_weight);
            symmetrize(b.dw_weight);
        }
        SplitMix64 rng(2);
        auto img = testutil::random_tensor<float>(
            {3, static_cast<size_t>(s), static_cast<size_t>(s)}, rng, -1.0, 1.0);
        symmetrize(img);
        auto files = dump_feature_maps(sym_model, img, "pipe_dumps_sym", 1);
        auto dumped = read_image(files[0]);
        const int w = dumped.width;
        for (int y = 0; y < dumped.height; ++y)
            for (int x = 0; x < w / 2; ++x) {
                const int a = dumped.pixels[y * w + x];
                const int b = dumped.pixels[y * w + (w - 1 - x)];
                CHECK(std::abs(a - b) <= 1);
            }
        std::filesystem::remove_all("pipe_dumps_sym");
    }
}

TEST_CASE("pipeline reduction: ssaa_blocks=0 equals frozen-scalar SSAA run") {
    auto rs = make_dataset("pipe_reduction", 8, 8, 55);

    auto cfg_base = small_config(55);
    cfg_base.ssaa_blocks = 0;
    auto cfg_ssaa = small_config(55);  // shares every drawn weight with cfg_base

    auto base = model_init<float>(cfg_base);
    auto with = model_init<float>(cfg_ssaa);

    TrainOptions opts;
    opts.epochs = 2;
    opts.batch_size = 8;
    opts.freeze_ssaa_scalars = true;  // keep (w1, w2) pinned at (1, 0)
    (void)train_backbone(base, rs, opts);
    (void)train_backbone(with, rs, opts);

    auto feats_of = [&](SSAAFormerModel<float>& m) {
        std::vector<std::vector<double>> f;
        std::vector<double> t;
        for (const auto& row : extract_features(m, rs)) {
            f.emplace_back(row.embedding.begin(), row.embedding.end());
            t.push_back(row.target);
        }
        return std::make_pair(f, t);
    };
    auto [fa, ta] = feats_of(base);
    auto [fb, tb] = feats_of(with);

    SVRTrainConfig scfg;
    auto svr_a = svr_fit(fa, ta, scfg);
    auto svr_b = svr_fit(fb, tb, scfg);
    double worst = 0;
    for (size_t i = 0; i < fa.size(); ++i) {
        const double sa = std::clamp(svr_predict(svr_a, fa[i]), 0.0, 1.0);
        const double sb = std::clamp(svr_predict(svr_b, fb[i]), 0.0, 1.0);
        worst = std::max(worst, std::abs(sa - sb));
    }
    CHECK(worst <= 1e-6);
    std::filesystem::remove_all("pipe_reduction");
}

TEST_CASE("feature file validation") {
    CHECK_THROWS_AS(read_features("no_such_features.csv"), IoError);
    {
        std::ofstream os("bad_features.csv");
        os << "path,target,f0\n";
        os << "a.ppm,0.5,1.0,2.0\n";  // extra column
    }
    CHECK_THROWS_AS(read_features("bad_features.csv"), FormatError);
    std::remove("bad_features.csv");
    {
        std::ofstream os("bad_header.csv");
        os << "path,score,f0\n";
    }
    CHECK_THROWS_AS(read_features("bad_header.csv"), FormatError);
    std::remove("bad_header.csv");
}
