#include "tsg/explain/gradcam.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "tsg/common/error.hpp"
#include "tsg/nn/ops.hpp"

namespace tsg::explain {

CamTap gradcam_tap(const classifier::ResNet& net, const nn::Tensor& x, const GradCamOptions& opt) {
    if (x.rank() != 4 || x.dim(0) != 1) throw UsageError("Grad-CAM takes a single [1, C, H, W] input");
    CamTap tap;
    tap.layer = opt.layer.empty() ? net.stage_names().back() : opt.layer;
    nn::GradGuard on(true);
    nn::Var input(x);
    nn::Var act = net.forward_to(input, tap.layer, false);
    act.set_retain_grad(true);
    nn::Var logits = net.forward_from(act, tap.layer, false);
    tap.logits = logits.value();
    const int k = tap.logits.dim(1);
    if (opt.target_class) {
        if (*opt.target_class < 0 || *opt.target_class >= k)
            throw UsageError("target class " + std::to_string(*opt.target_class) + " out of range");
        tap.target_class = *opt.target_class;
    } else {
        // Predicted class; ties between the two logits go to synthetic like the threshold rule.
        tap.target_class = static_cast<int>(std::max_element(tap.logits.data(), tap.logits.data() + k,
                                                             [](float a, float b) { return a <= b; }) -
                                            tap.logits.data());
    }
    nn::Tensor seed(tap.logits.shape());
    seed[tap.target_class] = 1.0f;
    nn::backward(logits, seed);
    tap.activation = act.value();
    tap.gradient = act.grad().size() ? act.grad() : nn::Tensor(act.shape());
    return tap;
}

std::vector<float> rectified_cam(const CamTap& tap) {
    const int C = tap.activation.dim(1), h = tap.activation.dim(2), w = tap.activation.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> cam(hw, 0.0);
    for (int c = 0; c < C; ++c) {
        const float* g = tap.gradient.data() + c * hw;
        const float* a = tap.activation.data() + c * hw;
        double alpha = 0;
        for (std::size_t i = 0; i < hw; ++i) alpha += g[i];
        alpha /= static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) cam[i] += alpha * a[i];
    }
    std::vector<float> out(hw);
    for (std::size_t i = 0; i < hw; ++i) out[i] = static_cast<float>(std::max(0.0, cam[i]));
    return out;
}

HeatMap gradcam(const classifier::ClassifierCheckpoint& ckpt, const features::FeatureMap& f, const GradCamOptions& opt) {
    const nn::Tensor x = ckpt.prepare(std::span(&f.data, 1));
    const CamTap tap = gradcam_tap(ckpt.network(), x, opt);
    const std::vector<float> cam = rectified_cam(tap);
    const int crop = ckpt.crop(), h = tap.activation.dim(2), w = tap.activation.dim(3);

    cv::Mat small(h, w, CV_32F, const_cast<float*>(cam.data()));
    cv::Mat up;
    cv::resize(small, up, cv::Size(crop, crop), 0, 0, cv::INTER_LINEAR);

    HeatMap hm;
    hm.height = f.data.height();
    hm.width = f.data.width();
    hm.data.assign(static_cast<std::size_t>(hm.height) * hm.width, 0.0f);
    hm.target_layer = tap.layer;
    hm.target_class = tap.target_class;
    hm.source = f.meta.source_path;
    hm.prob_synthetic = 1.0 / (1.0 + std::exp(double(tap.logits[0]) - double(tap.logits[1])));
    const int y0 = (hm.height - crop) / 2, x0 = (hm.width - crop) / 2;
    float mx = 0;
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            const float v = std::max(0.0f, up.at<float>(y, x));
            hm.data[static_cast<std::size_t>(y0 + y) * hm.width + x0 + x] = v;
            mx = std::max(mx, v);
        }
    if (!(mx > 0)) {
        hm.degenerate = true;
        std::fill(hm.data.begin(), hm.data.end(), 0.0f);
        return hm;
    }
    for (float& v : hm.data) v = std::min(1.0f, v / mx);
    return hm;
}

}  // namespace tsg::explain
