#include "deepfidelity/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deepfidelity/errors.hpp"
#include "deepfidelity/image.hpp"
#include "deepfidelity/optim.hpp"
#include "deepfidelity/rng.hpp"

namespace deepfidelity {

Tensor<float> load_input_tensor(const std::string& image_path, int input_size) {
    ImageU8 img = read_image(image_path);
    auto t = image_to_tensor(img);
    t = resize_bilinear(t, input_size, input_size);
    for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = (t.data()[i] - 0.5f) / 0.5f;
    return t;
}

namespace {

Tensor<float> batch_from(const std::vector<Tensor<float>>& images, const std::vector<size_t>& idx,
                         size_t begin, size_t end, bool augment, SplitMix64* aug_rng) {
    const auto& s = images[idx[begin]].shape();
    const size_t per = shape_numel(s);
    std::vector<float> data((end - begin) * per);
    for (size_t k = begin; k < end; ++k) {
        const Tensor<float>& src = images[idx[k]];
        float* dst = data.data() + (k - begin) * per;
        const bool flip = augment && aug_rng && aug_rng->next_below(2) == 1;
        if (!flip) {
            std::copy(src.data(), src.data() + per, dst);
        } else {
            const size_t w = s[2];
            const size_t rows = per / w;
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < w; ++j) dst[r * w + j] = src.data()[r * w + (w - 1 - j)];
        }
    }
    return Tensor<float>::from_data({end - begin, s[0], s[1], s[2]}, std::move(data));
}

} // namespace

TrainResult train_backbone(SSAAFormerModel<float>& model,
                           const std::vector<FidelityRecord>& records, const TrainOptions& opts) {
    if (records.empty()) throw DomainError("train_backbone: no records");
    if (opts.epochs < 1) throw DomainError("train_backbone: epochs must be >= 1");
    if (opts.batch_size < 1) throw DomainError("train_backbone: batch_size must be >= 1");
    if (opts.lr < 0) throw DomainError("train_backbone: lr must be >= 0");
    for (const auto& r : records)
        if (!r.mapped)
            throw DomainError("train_backbone: manifest is not quality-mapped (run map-quality)");

    std::vector<Tensor<float>> images;
    images.reserve(records.size());
    std::vector<float> targets(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        images.push_back(load_input_tensor(records[i].image_path, model.config.input_size));
        targets[i] = static_cast<float>(records[i].fidelity_target);
    }

    auto all_params = model.parameters();
    std::vector<Tensor<float>> params;
    visit_named_tensors(model, [&](const std::string& name, Tensor<float>& t, bool trainable) {
        if (!trainable) return;
        if (opts.freeze_ssaa_scalars &&
            (name.ends_with(".ssaa.w1") || name.ends_with(".ssaa.w2")))
            return;
        params.push_back(t);
    });
    AdamWState<float> state;
    state.init(params);
    SplitMix64 shuffle_rng(derive_seed(model.config.seed, /*stream=*/3));
    SplitMix64 aug_rng(derive_seed(model.config.seed, /*stream=*/4));

    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0;
        for (size_t begin = 0; begin < order.size(); begin += opts.batch_size) {
            const size_t end = std::min(order.size(), begin + opts.batch_size);
            auto batch = batch_from(images, order, begin, end, opts.hflip_augment, &aug_rng);
            std::vector<float> batch_targets(end - begin);
            for (size_t k = begin; k < end; ++k) batch_targets[k - begin] = targets[order[k]];
            auto target = Tensor<float>::from_data({end - begin}, std::move(batch_targets));

            auto out = model_forward(model, batch, /*training=*/true);
            auto diff = sub(out.score, target);
            auto loss = mean(mul(diff, diff));
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - begin);
            if (opts.lr > 0.0f) {
                backward(loss);
                adamw_step(params, state, opts.lr, opts.weight_decay);
            }
            zero_grads(all_params);
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(records.size()));
    }
    return result;
}

std::vector<FeatureRow> extract_features(SSAAFormerModel<float>& model,
                                         const std::vector<FidelityRecord>& records) {
    NoGradGuard ng;
    std::vector<FeatureRow> rows;
    rows.reserve(records.size());
    const size_t chunk = 32;
    for (size_t begin = 0; begin < records.size(); begin += chunk) {
        const size_t end = std::min(records.size(), begin + chunk);
        std::vector<Tensor<float>> imgs;
        for (size_t i = begin; i < end; ++i)
            imgs.push_back(load_input_tensor(records[i].image_path, model.config.input_size));
        const size_t per = imgs[0].numel();
        std::vector<float> data((end - begin) * per);
        for (size_t i = 0; i < imgs.size(); ++i)
            std::copy(imgs[i].data(), imgs[i].data() + per, data.data() + i * per);
        auto batch = Tensor<float>::from_data(
            {end - begin, 3, static_cast<size_t>(model.config.input_size),
             static_cast<size_t>(model.config.input_size)},
            std::move(data));
        auto out = model_forward(model, batch, /*training=*/false);
        const size_t d = out.embedding.dim(1);
        for (size_t i = begin; i < end; ++i) {
            FeatureRow row;
            row.path = records[i].image_path;
            row.target = records[i].mapped ? records[i].fidelity_target : 0.0;
            row.embedding.assign(out.embedding.data() + (i - begin) * d,
                                 out.embedding.data() + (i - begin + 1) * d);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_features(const std::string& path, const std::vector<FeatureRow>& rows) {
    if (rows.empty()) throw DomainError("write_features: no rows");
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    const size_t d = rows.front().embedding.size();
    os << "path,target";
    for (size_t j = 0; j < d; ++j) os << ",f" << j;
    os << "\n";
    char buf[64];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", row.target);
        os << row.path << ',' << buf;
        for (float v : row.embedding) {
            std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
            os << ',' << buf;
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed for '" + path + "'");
}

std::vector<FeatureRow> read_features(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open feature file '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw FormatError(path + ": empty feature file");
    size_t d = 0;
    {
        std::istringstream hs(line);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(hs, col, ',')) cols.push_back(col);
        if (cols.size() < 3 || cols[0] != "path" || cols[1] != "target")
            throw FormatError(path + ": expected header 'path,target,f0..'");
        d = cols.size() - 2;
    }
    std::vector<FeatureRow> rows;
    size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        FeatureRow row;
        if (!std::getline(ls, field, ',')) continue;
        row.path = field;
        try {
            if (!std::getline(ls, field, ',')) throw std::invalid_argument("missing target");
            row.target = std::stod(field);
            row.embedding.reserve(d);
            while (std::getline(ls, field, ',')) row.embedding.push_back(std::stof(field));
        } catch (const std::exception&) {
            throw FormatError(path + " line " + std::to_string(line_no) + ": malformed row");
        }
        if (row.embedding.size() != d)
            throw FormatError(path + " line " + std::to_string(line_no) + ": expected " +
                              std::to_string(d) + " features, got " +
                              std::to_string(row.embedding.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError(path + ": no feature rows");
    return rows;
}

double pipeline_score(SSAAFormerModel<float>& model, const SVRModel& svr,
                      const std::string& image_path) {
    NoGradGuard ng;
    auto t = load_input_tensor(image_path, model.config.input_size);
    std::vector<float> data(t.values());
    auto batch = Tensor<float>::from_data(
        {1, 3, static_cast<size_t>(model.config.input_size),
         static_cast<size_t>(model.config.input_size)},
        std::move(data));
    auto out = model_forward(model, batch, false);
    std::vector<double> emb(out.embedding.data(), out.embedding.data() + out.embedding.numel());
    return std::clamp(svr_predict(svr, emb), 0.0, 1.0);
}

EvalReport evaluate(SSAAFormerModel<float>& model, const SVRModel& svr,
                    const std::vector<FidelityRecord>& records) {
    if (records.empty()) throw DomainError("evaluate: no records");
    for (const auto& r : records)
        if (!r.mapped) throw DomainError("evaluate: manifest is not quality-mapped");

    auto rows = extract_features(model, records);
    EvalReport rep;
    rep.n = records.size();
    std::vector<double> scores(records.size());
    std::vector<Label> labels(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        std::vector<double> emb(rows[i].embedding.begin(), rows[i].embedding.end());
        scores[i] = std::clamp(svr_predict(svr, emb), 0.0, 1.0);
        labels[i] = records[i].label;
        const Label pred = threshold_classify(scores[i]);
        const bool correct = pred == records[i].label;
        rep.n_correct += correct ? 1 : 0;
        const int cls = records[i].label == Label::Fake ? 0 : 1;
        const size_t b = quality_bucket(records[i].quality_norm);
        rep.bucket_count[cls][b] += 1;
        rep.bucket_correct[cls][b] += correct ? 1 : 0;
    }
    rep.accuracy = static_cast<double>(rep.n_correct) / static_cast<double>(rep.n);
    rep.auc = auc(scores, labels);
    return rep;
}

std::vector<std::string> dump_feature_maps(SSAAFormerModel<float>& model,
                                           const Tensor<float>& image, const std::string& out_dir,
                                           int n_blocks) {
    NoGradGuard ng;
    std::vector<float> data(image.values());
    auto batch = Tensor<float>::from_data({1, image.dim(0), image.dim(1), image.dim(2)},
                                          std::move(data));
    std::vector<Tensor<float>> taps;
    (void)model_forward(model, batch, false, &taps);
    if (n_blocks < 0 || static_cast<size_t>(n_blocks) > taps.size())
        throw DomainError("dump_feature_maps: n_blocks " + std::to_string(n_blocks) +
                          " exceeds total blocks " + std::to_string(taps.size()));
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw IoError("cannot create output directory '" + out_dir + "'");

    std::vector<std::string> written;
    char name[64];
    for (int b = 0; b < n_blocks; ++b) {
        const auto& t = taps[b];
        const size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
        std::vector<double> mean_map(h * w, 0.0);
        for (size_t ch = 0; ch < c; ++ch)
            for (size_t i = 0; i < h * w; ++i) mean_map[i] += t.data()[ch * h * w + i];
        for (auto& v : mean_map) v /= static_cast<double>(c);
        const double lo = *std::min_element(mean_map.begin(), mean_map.end());
        const double hi = *std::max_element(mean_map.begin(), mean_map.end());
        ImageU8 img;
        img.width = static_cast<int>(w);
        img.height = static_cast<int>(h);
        img.channels = 1;
        img.pixels.resize(h * w);
        for (size_t i = 0; i < h * w; ++i) {
            if (hi - lo < 1e-12) {
                img.pixels[i] = 128;  // flat map renders mid-gray
            } else {
                img.pixels[i] = static_cast<uint8_t>(
                    std::lround(255.0 * (mean_map[i] - lo) / (hi - lo)));
            }
        }
        std::snprintf(name, sizeof(name), "block_%02d.pgm", b);
        const auto p = (std::filesystem::path(out_dir) / name).string();
        write_pgm(p, img);
        written.push_back(p);
    }
    return written;
}

} // namespace deepfidelity
