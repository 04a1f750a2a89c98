#include <cmath>

#include "doctest.h"
#include "support/param_fill.hpp"
#include "tsg/common/error.hpp"
#include "tsg/nn/ops.hpp"
#include "tsg/predictor/unet.hpp"

using namespace tsg;
using namespace tsg::nn;
using namespace tsg::predictor;

namespace {

void check_against_reference(const std::string& fixture) {
    const json fx = testing::load_fixture(fixture);
    const UNetConfig cfg = unet_config_from_json(fx.at("config"));
    UNet net(cfg, 0);

    const auto& names = fx.at("state_dict");
    REQUIRE(names.size() == net.parameters().entries().size());
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& e = net.parameters().entries()[i];
        CHECK(e.name == names[i][0].get<std::string>());
        CHECK(e.var.shape() == names[i][1].get<Shape>());
    }

    testing::fill_by_name(net.parameters());
    Tensor x = testing::fixture_input(fx.at("input_seed"), fx.at("input_shape").get<Shape>());
    const auto ts = fx.at("timesteps").get<std::vector<float>>();
    Tensor y = net.forward(Var(x), ts).value();
    const auto ref = fx.at("output").get<std::vector<float>>();
    REQUIRE(y.shape() == fx.at("output_shape").get<Shape>());
    double max_err = 0, max_ref = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        max_err = std::max(max_err, std::abs(double(y[i]) - ref[i]));
        max_ref = std::max(max_ref, std::abs(double(ref[i])));
    }
    MESSAGE(fixture << ": max |err| " << max_err << " (max |ref| " << max_ref << ")");
    CHECK(max_ref > 1e-2);
    CHECK(max_err < 1e-4 * std::max(1.0, max_ref));
}

}  // namespace

TEST_CASE("matches the reference U-Net with scale-shift norm and resblock resampling") {
    check_against_reference("adm_scale_shift_updown.json");
}

TEST_CASE("matches the reference U-Net with conv resampling and additive embedding") {
    check_against_reference("adm_plain_resample.json");
}

TEST_CASE("released 256 unconditional architecture") {
    UNetConfig cfg = adm_256_uncond();
    CHECK(cfg.image_size == 256);
    CHECK(cfg.out_channels == 6);
    CHECK(cfg.depth() == 5);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config validation") {
    UNetConfig cfg;
    cfg.image_size = 30;
    CHECK_THROWS_AS(cfg.validate(), ModelError);
    cfg = UNetConfig{};
    cfg.norm_groups = 5;
    CHECK_THROWS_AS(UNet(cfg, 0), ModelError);
}

TEST_CASE("input validation") {
    UNetConfig cfg;
    cfg.norm_groups = 8;
    UNet net(cfg, 1);
    std::vector<float> t1{0.0f};
    CHECK_THROWS_AS(net.forward(Var(Tensor({1, 3, 30, 32})), t1), ModelError);
    CHECK_THROWS_AS(net.forward(Var(Tensor({1, 1, 32, 32})), t1), ModelError);
    std::vector<float> t2{0.0f, 1.0f};
    CHECK_THROWS_AS(net.forward(Var(Tensor({1, 3, 32, 32})), t2), ModelError);
}

TEST_CASE("parameter gradients flow through the whole network") {
    UNetConfig cfg;
    cfg.image_size = 8;
    cfg.model_channels = 8;
    cfg.norm_groups = 4;
    cfg.channel_mult = {1, 2};
    cfg.attention_resolutions = {2};
    UNet net(cfg, 2);
    testing::fill_by_name(net.parameters());
    GradGuard on(true);
    std::vector<float> ts{10.0f};
    Var y = net.forward(Var(testing::fixture_input(5, {1, 3, 8, 8})), ts);
    Var loss = mse_loss(y, Tensor(y.shape(), 0.0f));
    backward(loss);
    for (const auto& e : net.parameters().entries()) {
        INFO(e.name);
        REQUIRE(e.var.grad().size() == e.var.value().size());
        double s = 0;
        for (float g : e.var.grad().values()) s += std::abs(g);
        CHECK(s > 0.0);
    }
}
