#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "tsg/data/manifest.hpp"
#include "tsg/diffusion/predictor.hpp"
#include "tsg/diffusion/schedule.hpp"
#include "tsg/predictor/unet.hpp"

namespace tsg::predictor {

enum class Source { pretrained_checkpoint, toy_trained };
const char* to_string(Source s) noexcept;

struct PredictorMeta {
    int height = 0, width = 0, channels = 3;
    int T = 1000;
    bool conditional = false;
    Source source = Source::toy_trained;
    std::string tag;
    // Schedule the network was trained with.
    std::string schedule = "linear";
    double beta_start = 1e-4, beta_end = 0.02;

    friend bool operator==(const PredictorMeta&, const PredictorMeta&) = default;
};

json to_json(const PredictorMeta& m);
PredictorMeta predictor_meta_from_json(const json& j);

// Unconditional eps network with its metadata. Immutable after construction,
// so concurrent predictions are safe.
class NoisePredictorHandle : public diffusion::NoisePredictor {
public:
    NoisePredictorHandle(UNet net, PredictorMeta meta);

    int height() const override { return meta_.height; }
    int width() const override { return meta_.width; }
    int channels() const override { return meta_.channels; }
    int timesteps() const override { return meta_.T; }

    const PredictorMeta& meta() const noexcept { return meta_; }
    const UNet& network() const noexcept { return net_; }
    std::string tag() const override { return meta_.tag; }
    // The schedule recorded in the metadata.
    diffusion::NoiseSchedule schedule() const;

    // Images per network call inside predict_noise.
    void set_max_batch(int n) { max_batch_ = n > 0 ? n : 1; }

    // Weights container with {"predictor": meta, "unet": config} metadata.
    void save(const std::filesystem::path& path) const;

protected:
    nn::Tensor evaluate(const nn::Tensor& batch, int t) const override;

private:
    UNet net_;
    PredictorMeta meta_;
    int max_batch_ = 32;
};

struct ExpectedMeta {
    std::optional<int> resolution;
    std::optional<int> T;
};

// Loads a checkpoint produced by save() or by tools/convert_adm_checkpoint.py.
// Throws ModelError for a missing file, metadata mismatch or a class-conditional model.
std::shared_ptr<NoisePredictorHandle> load_pretrained(const std::filesystem::path& path, const ExpectedMeta& expected = {});

// Desk-scale U-Net description.
struct ToyUNetConfig {
    int base_channels = 16;
    int depth = 2;
    int time_embedding_dim = 64;
    int resolution = 32;
    int T = 1000;
    int num_res_blocks = 1;
    int norm_groups = 8;
    bool bottleneck_attention = true;

    void validate() const;
    UNetConfig to_unet() const;
};

json to_json(const ToyUNetConfig& c);
ToyUNetConfig toy_config_from_json(const json& j);

struct ToyTrainConfig {
    int steps = 20000;
    int batch_size = 8;
    float learning_rate = 5e-4f;
    std::uint64_t seed = 0;
    // Called after every step with (step, loss).
    std::function<void(int, double)> on_step;
};

struct ToyTrainResult {
    std::shared_ptr<NoisePredictorHandle> handle;
    std::vector<double> losses;
};

// Trains eps-prediction (mean squared error, uniform t, Gaussian eps) on the
// real train-split images of the manifest.
ToyTrainResult train_toy_ddpm(const data::DatasetManifest& manifest, const ToyUNetConfig& cfg,
                              const diffusion::NoiseSchedule& sched, const ToyTrainConfig& train);

// Deterministic DDIM sampling from seeded Gaussian noise, clamping the x0
// estimate at every step; outputs lie in [-1, 1].
std::vector<diffusion::ImageTensor> generate_samples(const NoisePredictorHandle& h, int n, int k, std::uint64_t seed,
                                                     const diffusion::NoiseSchedule& sched, int batch_size = 50);

}  // namespace tsg::predictor
