#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsg/classifier/resnet.hpp"
#include "tsg/data/manifest.hpp"
#include "tsg/diffusion/image.hpp"
#include "tsg/features/extract.hpp"

namespace tsg::classifier {

struct ClassifierConfig {
    ResNetConfig net;
    // Square crop side; 0 uses the full feature resolution.
    int crop_size = 224;
    int epochs = 5;
    int batch_size = 32;
    float learning_rate = 1e-3f;
    std::uint64_t seed = 0;
    // Optional weights container with backbone tensors (the "fc." head is skipped).
    std::string pretrained_backbone;

    void validate() const;
};

json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const json& j);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    std::optional<double> val_accuracy;
};

struct PredictionResult {
    double prob_synthetic = 0;
    data::Label label = data::Label::real;
};

// Applies the 0.5 threshold; ties go to synthetic.
PredictionResult make_prediction(double prob_synthetic);

// Maps the whole feature map (all channels) to [0, 1]; a constant map becomes 0.
diffusion::ImageTensor minmax_normalize(const diffusion::ImageTensor& f);

class ClassifierCheckpoint {
public:
    ClassifierCheckpoint(ResNet net, ClassifierConfig cfg, int feature_height, int feature_width);

    const ResNet& network() const noexcept { return net_; }
    ResNet& network() noexcept { return net_; }
    const ClassifierConfig& config() const noexcept { return cfg_; }
    int feature_height() const noexcept { return fh_; }
    int feature_width() const noexcept { return fw_; }
    int crop() const noexcept;

    std::string train_manifest_digest;
    std::vector<EpochLog> history;

    // Weights plus {"classifier": config, "classes", "train_manifest_digest", "history", "feature_shape"}.
    void save(const std::filesystem::path& path) const;
    static ClassifierCheckpoint load(const std::filesystem::path& path);

    // Normalized, centre-cropped [N, C, crop, crop] batch. Throws UsageError
    // when a feature is smaller than the crop.
    nn::Tensor prepare(std::span<const diffusion::ImageTensor> features) const;

private:
    ResNet net_;
    ClassifierConfig cfg_;
    int fh_, fw_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on the train split of a feature manifest (feature file paths with
// labels); reports validation accuracy per epoch when a val split exists.
// Throws DataError on single-class data, UsageError on a crop larger than the
// features.
ClassifierCheckpoint train_classifier(const data::DatasetManifest& features, const ClassifierConfig& cfg,
                                      const EpochCallback& on_epoch = {});

// Deterministic eval-mode prediction with a centre crop.
PredictionResult predict(const ClassifierCheckpoint& ckpt, const features::FeatureMap& f);
std::vector<PredictionResult> predict_batch(const ClassifierCheckpoint& ckpt,
                                            std::span<const diffusion::ImageTensor> features, int batch_size = 64);

struct LabeledPrediction {
    std::string path;
    data::Label truth;
    data::Split split;
    PredictionResult result;
};

// Predicts every entry of a feature manifest, optionally restricted to a split.
std::vector<LabeledPrediction> predict_manifest(const ClassifierCheckpoint& ckpt, const data::DatasetManifest& features,
                                                std::optional<data::Split> split = std::nullopt, int batch_size = 64);

json to_json(const LabeledPrediction& p);

}  // namespace tsg::classifier
