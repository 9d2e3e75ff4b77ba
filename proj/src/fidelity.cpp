#include "deepfidelity/fidelity.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "deepfidelity/errors.hpp"

namespace deepfidelity {

std::string label_str(Label l) { return l == Label::Real ? "real" : "fake"; }

Label parse_label(const std::string& s) {
    std::string lower;
    lower.reserve(s.size());
    for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "real") return Label::Real;
    if (lower == "fake") return Label::Fake;
    throw FormatError("unknown label '" + s + "' (expected real or fake)");
}

std::vector<double> normalize_quality(const std::vector<double>& raw, std::optional<MinMax> stats) {
    if (raw.empty()) throw DomainError("normalize_quality: empty input");
    MinMax mm;
    if (stats) {
        mm = *stats;
        if (mm.min > mm.max) throw DomainError("normalize_quality: min > max in supplied stats");
    } else {
        mm.min = *std::min_element(raw.begin(), raw.end());
        mm.max = *std::max_element(raw.begin(), raw.end());
    }
    std::vector<double> out(raw.size());
    const double range = mm.max - mm.min;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (range == 0.0) {
            out[i] = 0.5;
        } else {
            out[i] = std::clamp((raw[i] - mm.min) / range, 0.0, 1.0);
        }
    }
    return out;
}

double map_to_fidelity(double quality_norm, Label label) {
    if (!(quality_norm >= 0.0 && quality_norm <= 1.0))
        throw DomainError("map_to_fidelity: quality_norm " + std::to_string(quality_norm) +
                          " outside [0,1]");
    return label == Label::Real ? 0.6 + 0.4 * quality_norm : 0.4 * quality_norm;
}

Label threshold_classify(double score) {
    if (std::isnan(score)) throw DomainError("threshold_classify: NaN score");
    return score > 0.5 ? Label::Real : Label::Fake;
}

double proxy_quality(const Tensor<float>& image) {
    if (image.ndim() != 3 || image.dim(0) < 1)
        throw DomainError("proxy_quality: expected [C,H,W] image, got " + shape_str(image.shape()));
    const size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h < 3 || w < 3) throw DomainError("proxy_quality: image must be at least 3x3");
    // grayscale = channel mean
    std::vector<double> gray(h * w, 0.0);
    for (size_t ch = 0; ch < c; ++ch)
        for (size_t i = 0; i < h * w; ++i) gray[i] += image.data()[ch * h * w + i];
    for (double& g : gray) g /= static_cast<double>(c);
    // 3x3 Laplacian on interior pixels
    std::vector<double> resp;
    resp.reserve((h - 2) * (w - 2));
    for (size_t y = 1; y + 1 < h; ++y)
        for (size_t x = 1; x + 1 < w; ++x)
            resp.push_back(gray[(y - 1) * w + x] + gray[(y + 1) * w + x] + gray[y * w + x - 1] +
                           gray[y * w + x + 1] - 4.0 * gray[y * w + x]);
    double mu = 0;
    for (double v : resp) mu += v;
    mu /= static_cast<double>(resp.size());
    double var = 0;
    for (double v : resp) var += (v - mu) * (v - mu);
    return var / static_cast<double>(resp.size());
}

QualityStats compute_quality_stats(const std::vector<FidelityRecord>& records) {
    QualityStats st;
    bool real_seen = false, fake_seen = false;
    for (const auto& r : records) {
        MinMax& mm = r.label == Label::Real ? st.real : st.fake;
        bool& seen = r.label == Label::Real ? real_seen : fake_seen;
        if (!seen) {
            mm.min = mm.max = r.quality_raw;
            seen = true;
        } else {
            mm.min = std::min(mm.min, r.quality_raw);
            mm.max = std::max(mm.max, r.quality_raw);
        }
    }
    if (!real_seen && !fake_seen) throw DomainError("compute_quality_stats: no records");
    return st;
}

void map_records(std::vector<FidelityRecord>& records, const QualityStats& stats) {
    for (auto& r : records) {
        const MinMax& mm = r.label == Label::Real ? stats.real : stats.fake;
        r.quality_norm = normalize_quality({r.quality_raw}, mm)[0];
        r.fidelity_target = map_to_fidelity(r.quality_norm, r.label);
        r.mapped = true;
    }
}

size_t quality_bucket(double quality_norm, int n_buckets) {
    if (n_buckets < 1) throw DomainError("quality_bucket: n_buckets must be >= 1");
    const double scaled = quality_norm * n_buckets;
    auto b = static_cast<long>(std::floor(scaled));
    if (b >= n_buckets) b = n_buckets - 1;  // value 1.0 lands in the closed last bucket
    if (b < 0) b = 0;
    return static_cast<size_t>(b);
}

std::vector<std::vector<size_t>> bucket_by_quality(const std::vector<FidelityRecord>& records,
                                                   int n_buckets) {
    if (n_buckets < 1) throw DomainError("bucket_by_quality: n_buckets must be >= 1");
    std::vector<std::vector<size_t>> buckets(static_cast<size_t>(n_buckets));
    for (size_t i = 0; i < records.size(); ++i)
        buckets[quality_bucket(records[i].quality_norm, n_buckets)].push_back(i);
    return buckets;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double_field(const std::string& s, const std::string& col, size_t line_no) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError("manifest line " + std::to_string(line_no) + ": column '" + col +
                          "' is not a number: '" + s + "'");
    }
}

} // namespace

std::vector<FidelityRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw FormatError(path + ": empty manifest");
    auto header = split_csv_line(line);
    const bool mapped = header.size() == 5;
    if (!(header.size() == 3 || mapped) || header[0] != "path" || header[1] != "label" ||
        header[2] != "quality" ||
        (mapped && (header[3] != "quality_norm" || header[4] != "fidelity_target")))
        throw FormatError(path + ": expected header 'path,label,quality[,quality_norm,fidelity_target]'");

    const auto base_dir = std::filesystem::path(path).parent_path();
    std::vector<FidelityRecord> out;
    size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw FormatError(path + " line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " columns, got " +
                              std::to_string(fields.size()));
        FidelityRecord r;
        r.image_path = fields[0];
        if (!r.image_path.empty() && !std::filesystem::path(r.image_path).is_absolute() &&
            !std::filesystem::exists(r.image_path)) {
            auto resolved = base_dir / r.image_path;
            if (std::filesystem::exists(resolved)) r.image_path = resolved.string();
        }
        try {
            r.label = parse_label(fields[1]);
        } catch (const FormatError& e) {
            throw FormatError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        r.quality_raw = parse_double_field(fields[2], "quality", line_no);
        if (r.quality_raw < 0)
            throw FormatError(path + " line " + std::to_string(line_no) + ": quality must be >= 0");
        if (mapped) {
            r.quality_norm = parse_double_field(fields[3], "quality_norm", line_no);
            r.fidelity_target = parse_double_field(fields[4], "fidelity_target", line_no);
            r.mapped = true;
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<FidelityRecord>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open manifest '" + path + "' for writing");
    const bool mapped = !records.empty() && records.front().mapped;
    os << (mapped ? "path,label,quality,quality_norm,fidelity_target\n" : "path,label,quality\n");
    char buf[64];
    for (const auto& r : records) {
        os << r.image_path << ',' << label_str(r.label) << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", r.quality_raw);
        os << buf;
        if (mapped) {
            std::snprintf(buf, sizeof(buf), "%.17g", r.quality_norm);
            os << ',' << buf;
            std::snprintf(buf, sizeof(buf), "%.17g", r.fidelity_target);
            os << ',' << buf;
        }
        os << '\n';
    }
    if (!os) throw IoError("write failed for manifest '" + path + "'");
}

} // namespace deepfidelity
