#include <cmath>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "support/temp_dir.hpp"
#include "tsg/common/error.hpp"
#include "tsg/explain/gradcam.hpp"

using namespace tsg;
using namespace tsg::explain;
using tsg::classifier::Arch;
using tsg::classifier::ClassifierCheckpoint;
using tsg::classifier::ClassifierConfig;
using tsg::classifier::ResNet;
using tsg::diffusion::ImageTensor;
namespace fs = std::filesystem;

namespace {

ClassifierCheckpoint make_ckpt(int size, int width, std::uint64_t seed) {
    ClassifierConfig cfg;
    cfg.net.arch = Arch::resnet_cifar;
    cfg.net.cifar_width = width;
    cfg.net.cifar_blocks = 1;
    cfg.crop_size = 0;
    return ClassifierCheckpoint(ResNet(cfg.net, seed), cfg, size, size);
}

features::FeatureMap random_feature(int size, std::mt19937_64& rng) {
    std::normal_distribution<float> g;
    features::FeatureMap f{ImageTensor(size, size, 3, diffusion::ValueRange::unbounded()), {}};
    for (float& v : f.data.values()) v = g(rng);
    return f;
}

nn::Var param(const ResNet& net, const std::string& name) { return net.parameters().find(name); }

}  // namespace

TEST_CASE("single spatial unit: map is the rectified weight-activation product") {
    // A 4x4 input reaches layer3 at 1x1.
    const ClassifierCheckpoint ck = make_ckpt(4, 4, 2);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 6; ++trial) {
        const auto f = random_feature(4, rng);
        const nn::Tensor x = ck.prepare(std::span(&f.data, 1));
        for (int target : {0, 1}) {
            const CamTap tap = gradcam_tap(ck.network(), x, {"", target});
            REQUIRE(tap.activation.dim(2) == 1);
            REQUIRE(tap.activation.dim(3) == 1);
            const nn::Tensor& W = param(ck.network(), "fc.weight").value();
            const int C = tap.activation.dim(1);
            double expect = 0;
            for (int c = 0; c < C; ++c) {
                CHECK(tap.gradient[c] == doctest::Approx(W[target * C + c]).epsilon(1e-6));
                expect += double(W[target * C + c]) * tap.activation[c];
            }
            const std::vector<float> cam = rectified_cam(tap);
            REQUIRE(cam.size() == 1);
            CHECK(cam[0] == doctest::Approx(std::max(0.0, expect)).epsilon(1e-5));
        }
    }
}

TEST_CASE("heatmap range and normalisation") {
    const ClassifierCheckpoint ck = make_ckpt(16, 8, 4);
    std::mt19937_64 rng(5);
    int nondegenerate = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto f = random_feature(16, rng);
        const HeatMap hm = gradcam(ck, f);
        REQUIRE(hm.height == 16);
        REQUIRE(hm.width == 16);
        CHECK(hm.target_layer == "layer3");
        float mx = 0;
        for (float v : hm.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            mx = std::max(mx, v);
        }
        if (!hm.degenerate) {
            CHECK(mx == 1.0f);
            ++nondegenerate;
        }
        // Default target is the predicted class.
        const auto p = classifier::predict(ck, f);
        CHECK(hm.target_class == (p.label == data::Label::synthetic ? 1 : 0));
        CHECK(hm.prob_synthetic == doctest::Approx(p.prob_synthetic).epsilon(1e-9));
    }
    CHECK(nondegenerate > 0);
    CHECK_THROWS_AS(gradcam(ck, random_feature(16, rng), {"layer7", std::nullopt}), UsageError);
    CHECK_THROWS_AS(gradcam(ck, random_feature(16, rng), {"", 2}), UsageError);
}

TEST_CASE("zero gradient gives a flagged all-zero map") {
    ClassifierCheckpoint ck = make_ckpt(8, 4, 6);
    nn::Var w = param(ck.network(), "fc.weight");
    w.mutable_value().fill(0.0f);
    std::mt19937_64 rng(7);
    const HeatMap hm = gradcam(ck, random_feature(8, rng));
    CHECK(hm.degenerate);
    for (float v : hm.data) CHECK(v == 0.0f);
}

TEST_CASE("shifting the other logit leaves the map unchanged") {
    ClassifierCheckpoint ck = make_ckpt(16, 8, 8);
    std::mt19937_64 rng(9);
    const auto f = random_feature(16, rng);
    const HeatMap a = gradcam(ck, f, {"", 1});
    nn::Var b = param(ck.network(), "fc.bias");
    b.mutable_value()[0] += 3.5f;
    const HeatMap c = gradcam(ck, f, {"", 1});
    CHECK(a.data == c.data);
}

TEST_CASE("target-layer gradient matches finite differences") {
    const ClassifierCheckpoint ck = make_ckpt(16, 8, 10);
    std::mt19937_64 rng(11);
    const auto f = random_feature(16, rng);
    const nn::Tensor x = ck.prepare(std::span(&f.data, 1));
    for (const std::string layer : {"layer3", "layer2"}) {
        const CamTap tap = gradcam_tap(ck.network(), x, {layer, 1});
        std::uniform_int_distribution<std::size_t> pick(0, tap.activation.size() - 1);
        for (int probe = 0; probe < 10; ++probe) {
            const std::size_t i = pick(rng);
            const float h = 1e-2f;
            nn::Tensor up = tap.activation, down = tap.activation;
            up[i] += h;
            down[i] -= h;
            const double lu = ck.network().forward_from(nn::Var(up), layer, false).value()[1];
            const double ld = ck.network().forward_from(nn::Var(down), layer, false).value()[1];
            const double fd = (lu - ld) / (2.0 * h);
            const double tol = layer == "layer3" ? 1e-3 : 2e-2;
            CHECK(std::abs(fd - tap.gradient[i]) <= tol * std::max(1e-2, std::abs(fd)));
        }
    }
}

TEST_CASE("overlay blending and determinism") {
    testing::TempDir tmp;
    cv::Mat src(40, 30, CV_8UC3);
    cv::RNG rng(1);
    rng.fill(src, cv::RNG::UNIFORM, 0, 256);
    REQUIRE(cv::imwrite((tmp / "src.png").string(), src));

    HeatMap hm;
    hm.height = hm.width = 16;
    for (int i = 0; i < 256; ++i) hm.data.push_back(static_cast<float>(i) / 255.0f);

    cv::Mat resized;
    cv::resize(src, resized, cv::Size(16, 16), 0, 0, cv::INTER_LINEAR);
    const RgbImage zero = overlay(hm, tmp / "src.png", 0.0);
    const RgbImage one = overlay(hm, tmp / "src.png", 1.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const cv::Vec3b px = resized.at<cv::Vec3b>(y, x);
            const std::size_t o = (static_cast<std::size_t>(y) * 16 + x) * 3;
            CHECK(zero.pixels[o] == px[2]);
            CHECK(zero.pixels[o + 1] == px[1]);
            CHECK(zero.pixels[o + 2] == px[0]);
            const Rgb c = colormap(hm.at(y, x));
            CHECK(one.pixels[o] == c[0]);
            CHECK(one.pixels[o + 1] == c[1]);
            CHECK(one.pixels[o + 2] == c[2]);
        }

    write_overlay(hm, tmp / "src.png", 0.4, tmp / "a.png");
    write_overlay(hm, tmp / "src.png", 0.4, tmp / "b.png");
    CHECK(read_binary_file(tmp / "a.png") == read_binary_file(tmp / "b.png"));
    const json side = read_json_file(tmp / "a.png.json");
    CHECK(side.contains("target_class"));
    CHECK(side.contains("prob"));
    CHECK(side.contains("layer"));
    CHECK(side.contains("source"));

    CHECK_THROWS_AS(overlay(hm, tmp / "src.png", 1.5), UsageError);
    CHECK_THROWS_AS(overlay(hm, tmp / "nope.png", 0.5), DataError);
}

TEST_CASE("colormap endpoints") {
    CHECK(colormap(0.0f) == Rgb{0, 0, 128});
    CHECK(colormap(1.0f) == Rgb{128, 0, 0});
    CHECK(colormap(-1.0f) == colormap(0.0f));
    CHECK(jet_colormap().size() == 256);
}
