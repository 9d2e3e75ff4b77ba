#pragma once

// End-to-end orchestration: backbone training on fidelity targets, feature
// extraction for the SVR stage, evaluation (Acc / AUC / per-quality buckets),
// and the raw feature-map dump.

#include <string>
#include <vector>

#include "deepfidelity/fidelity.hpp"
#include "deepfidelity/metrics.hpp"
#include "deepfidelity/model.hpp"
#include "deepfidelity/svr.hpp"

namespace deepfidelity {

struct TrainOptions {
    int epochs = 15;
    int batch_size = 16;
    float lr = 1.2e-3f;
    float weight_decay = 0.05f;
    bool hflip_augment = false;
    bool freeze_ssaa_scalars = false;  // ablation control: keep (w1,w2) at (1,0)
};

struct TrainResult {
    std::vector<double> epoch_losses;
};

// Loads, resizes to the model input size, and normalizes ((x - 0.5) / 0.5).
Tensor<float> load_input_tensor(const std::string& image_path, int input_size);

// Minimizes MSE between the head score and fidelity_target with AdamW.
// Records must be mapped. Deterministic given the model's config seed.
TrainResult train_backbone(SSAAFormerModel<float>& model,
                           const std::vector<FidelityRecord>& records, const TrainOptions& opts);

struct FeatureRow {
    std::string path;
    double target = 0.0;
    std::vector<float> embedding;
};

std::vector<FeatureRow> extract_features(SSAAFormerModel<float>& model,
                                         const std::vector<FidelityRecord>& records);

// Feature file: CSV header `path,target,f0..f{d-1}`.
void write_features(const std::string& path, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_features(const std::string& path);

// embedding -> svr_predict -> clamp to [0,1] -> threshold_classify.
double pipeline_score(SSAAFormerModel<float>& model, const SVRModel& svr,
                      const std::string& image_path);

EvalReport evaluate(SSAAFormerModel<float>& model, const SVRModel& svr,
                    const std::vector<FidelityRecord>& records);

// One grayscale PGM per block (channel-mean, min-max scaled; flat maps render
// mid-gray). Returns the written paths.
std::vector<std::string> dump_feature_maps(SSAAFormerModel<float>& model,
                                           const Tensor<float>& image, const std::string& out_dir,
                                           int n_blocks);

} // namespace deepfidelity
