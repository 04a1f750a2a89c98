#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsg/classifier/classifier.hpp"
#include "tsg/features/extract.hpp"

namespace tsg::explain {

struct HeatMap {
    int height = 0, width = 0;
    // Row-major, values in [0, 1].
    std::vector<float> data;
    std::string target_layer;
    int target_class = 1;
    std::string source;
    double prob_synthetic = 0;
    // True when the rectified map was identically zero (data is all zeros).
    bool degenerate = false;

    float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

struct GradCamOptions {
    // Empty selects the last residual stage.
    std::string layer;
    // Defaults to the predicted class.
    std::optional<int> target_class;
};

// Activation of the target layer and d(logit[target]) / d(activation) for one input.
struct CamTap {
    nn::Tensor activation;  // [1, C, h, w]
    nn::Tensor gradient;    // same shape
    nn::Tensor logits;      // [1, classes]
    std::string layer;
    int target_class = 0;
};

// x: one prepared classifier input [1, C, H, W].
CamTap gradcam_tap(const classifier::ResNet& net, const nn::Tensor& x, const GradCamOptions& opt);

// relu(sum_c mean_hw(gradient_c) * activation_c), [h * w] row-major, unnormalised.
std::vector<float> rectified_cam(const CamTap& tap);

// Full Grad-CAM on a feature map: centre crop as in predict, map bilinearly
// resized to the crop and placed at its offset in a feature-sized map,
// then max-normalised.
HeatMap gradcam(const classifier::ClassifierCheckpoint& ckpt, const features::FeatureMap& f,
                const GradCamOptions& opt = {});

using Rgb = std::array<std::uint8_t, 3>;
const std::array<Rgb, 256>& jet_colormap();
Rgb colormap(float v);

// 8-bit RGB image, row-major.
struct RgbImage {
    int height = 0, width = 0;
    std::vector<std::uint8_t> pixels;
};

// Alpha-blends the colormapped heatmap over the source image resized to the
// heatmap's size. Throws UsageError unless 0 <= alpha <= 1.
RgbImage overlay(const HeatMap& hm, const std::filesystem::path& image, double alpha);
void save_rgb_png(const RgbImage& img, const std::filesystem::path& path);

// Writes the overlay PNG and <png>.json with {source, target_class, prob, layer}.
void write_overlay(const HeatMap& hm, const std::filesystem::path& image, double alpha,
                   const std::filesystem::path& png);

}  // namespace tsg::explain
