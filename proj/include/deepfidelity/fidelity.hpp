#pragma once

// Perceptual forgery fidelity: per-class quality normalization and the
// mapping of normalized quality into disjoint target ranges
// (fake -> [0, 0.4], real -> [0.6, 1.0]).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "deepfidelity/tensor.hpp"

namespace deepfidelity {

enum class Label { Real, Fake };

std::string label_str(Label l);
Label parse_label(const std::string& s);  // case-insensitive; throws FormatError

struct FidelityRecord {
    std::string image_path;
    Label label = Label::Fake;
    double quality_raw = 0.0;
    double quality_norm = 0.0;     // in [0,1] once mapped
    double fidelity_target = 0.0;  // in [0,1] once mapped
    bool mapped = false;           // quality_norm / fidelity_target populated
};

struct MinMax {
    double min = 0.0;
    double max = 0.0;
};

// Per-class normalization statistics, computed on the training split.
struct QualityStats {
    MinMax real;
    MinMax fake;
};

// (q - min) / (max - min), clamped to [0,1]. Without stats, min/max come from
// the input itself. A degenerate range (min == max) maps everything to 0.5.
std::vector<double> normalize_quality(const std::vector<double>& raw,
                                      std::optional<MinMax> stats = std::nullopt);

// real: 0.6 + 0.4*q, fake: 0.4*q. q must lie in [0,1].
double map_to_fidelity(double quality_norm, Label label);

// score > 0.5 -> real, otherwise fake (ties go to fake). NaN is rejected.
Label threshold_classify(double score);

// Sharpness proxy: variance of the 3x3 Laplacian response on the grayscale
// image. Stand-in for an external face-quality scorer; higher is sharper.
double proxy_quality(const Tensor<float>& image);

QualityStats compute_quality_stats(const std::vector<FidelityRecord>& records);

// Fills quality_norm and fidelity_target on every record using per-class
// min-max stats (training stats passed in for a test split).
void map_records(std::vector<FidelityRecord>& records, const QualityStats& stats);

// Partition indices by quality_norm into n equal intervals of [0,1]; the last
// interval is closed. Records must be mapped.
std::vector<std::vector<size_t>> bucket_by_quality(const std::vector<FidelityRecord>& records,
                                                   int n_buckets = 4);
size_t quality_bucket(double quality_norm, int n_buckets = 4);

// Manifest CSV: header `path,label,quality`; mapped manifests append
// `quality_norm,fidelity_target`. Paths are resolved relative to the
// manifest's directory when not found as given.
std::vector<FidelityRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<FidelityRecord>& records);

} // namespace deepfidelity
