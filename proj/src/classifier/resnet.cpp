#include "tsg/classifier/resnet.hpp"

#include "tsg/common/error.hpp"
#include "tsg/nn/ops.hpp"

namespace tsg::classifier {

using nn::Var;

const char* to_string(Arch a) noexcept {
    switch (a) {
        case Arch::resnet18: return "resnet18";
        case Arch::resnet50: return "resnet50";
        case Arch::resnet_cifar: return "resnet_cifar";
    }
    return "?";
}

Arch parse_arch(const std::string& s) {
    if (s == "resnet18") return Arch::resnet18;
    if (s == "resnet50") return Arch::resnet50;
    if (s == "resnet_cifar") return Arch::resnet_cifar;
    throw UsageError("unknown architecture '" + s + "' (expected resnet18, resnet50 or resnet_cifar)");
}

void ResNetConfig::validate() const {
    if (num_classes < 2) throw UsageError("classifier needs at least 2 classes");
    if (in_channels < 1) throw UsageError("classifier needs at least 1 input channel");
    if (arch == Arch::resnet_cifar && (cifar_width < 1 || cifar_blocks < 1))
        throw UsageError("resnet_cifar width and blocks must be positive");
}

json to_json(const ResNetConfig& c) {
    json j = {{"arch", to_string(c.arch)}, {"num_classes", c.num_classes}, {"in_channels", c.in_channels}};
    if (c.arch == Arch::resnet_cifar) {
        j["cifar_width"] = c.cifar_width;
        j["cifar_blocks"] = c.cifar_blocks;
    }
    return j;
}

ResNetConfig resnet_config_from_json(const json& j) {
    ResNetConfig c;
    try {
        c.arch = parse_arch(j.at("arch").get<std::string>());
        c.num_classes = j.value("num_classes", c.num_classes);
        c.in_channels = j.value("in_channels", c.in_channels);
        c.cifar_width = j.value("cifar_width", c.cifar_width);
        c.cifar_blocks = j.value("cifar_blocks", c.cifar_blocks);
    } catch (const json::exception& e) {
        throw ModelError(std::string("malformed classifier architecture: ") + e.what());
    }
    c.validate();
    return c;
}

namespace {

struct Block {
    nn::Conv2d conv1, conv2, conv3;
    nn::BatchNorm2d bn1, bn2, bn3;
    nn::Conv2d down_conv;
    nn::BatchNorm2d down_bn;
    bool bottleneck = false;
    bool has_down = false;

    Var operator()(const Var& x, bool training) const {
        Var h = nn::relu(bn1(conv1(x), training));
        h = bn2(conv2(h), training);
        if (bottleneck) h = bn3(conv3(nn::relu(h)), training);
        const Var skip = has_down ? down_bn(down_conv(x), training) : x;
        return nn::relu(nn::add(h, skip));
    }
};

}  // namespace

struct ResNet::Impl {
    ResNetConfig cfg;
    nn::ParameterStore ps;
    nn::Conv2d stem;
    nn::BatchNorm2d stem_bn;
    bool stem_pool = true;
    std::vector<std::vector<Block>> stages;
    nn::Linear fc;

    int stage_index(const std::string& name) const {
        for (std::size_t i = 0; i < stages.size(); ++i)
            if (name == "layer" + std::to_string(i + 1)) return static_cast<int>(i);
        throw UsageError("unknown target layer '" + name + "'");
    }

    Var run_stages(Var h, int from, int to, bool training) const {
        for (int s = from; s < to; ++s)
            for (const Block& b : stages[s]) h = b(h, training);
        return h;
    }

    Var head(const Var& h) const { return fc(nn::global_avg_pool(h)); }

    Var stem_forward(const Var& x, bool training) const {
        if (x.shape().size() != 4 || x.shape()[1] != cfg.in_channels)
            throw ModelError("classifier expects [N, " + std::to_string(cfg.in_channels) + ", H, W] input, got " +
                             nn::to_string(x.shape()));
        Var h = nn::relu(stem_bn(stem(x), training));
        return stem_pool ? nn::max_pool2d(h, 3, 2, 1) : h;
    }
};

ResNet::ResNet(const ResNetConfig& cfg, std::uint64_t seed) : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    Impl& m = *impl_;
    m.cfg = cfg;
    Rng rng = make_rng(seed, "resnet-init");
    const auto conv_init = nn::Init::kaiming_normal_fan_out;

    std::vector<int> widths, depths;
    bool bottleneck = false;
    int in = 0;
    if (cfg.arch == Arch::resnet_cifar) {
        in = cfg.cifar_width;
        m.stem = nn::Conv2d(m.ps, "conv1", cfg.in_channels, in, 3, 1, 1, false, rng, conv_init);
        m.stem_pool = false;
        widths = {in, 2 * in, 4 * in};
        depths.assign(3, cfg.cifar_blocks);
    } else {
        in = 64;
        m.stem = nn::Conv2d(m.ps, "conv1", cfg.in_channels, in, 7, 2, 3, false, rng, conv_init);
        widths = {64, 128, 256, 512};
        bottleneck = cfg.arch == Arch::resnet50;
        depths = bottleneck ? std::vector<int>{3, 4, 6, 3} : std::vector<int>{2, 2, 2, 2};
    }
    m.stem_bn = nn::BatchNorm2d(m.ps, "bn1", in);
    const int expansion = bottleneck ? 4 : 1;

    for (std::size_t s = 0; s < widths.size(); ++s) {
        std::vector<Block> stage;
        const int w = widths[s];
        for (int b = 0; b < depths[s]; ++b) {
            const int stride = (b == 0 && s > 0) ? 2 : 1;
            const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
            Block blk;
            blk.bottleneck = bottleneck;
            if (bottleneck) {
                blk.conv1 = nn::Conv2d(m.ps, p + "conv1", in, w, 1, 1, 0, false, rng, conv_init);
                blk.bn1 = nn::BatchNorm2d(m.ps, p + "bn1", w);
                blk.conv2 = nn::Conv2d(m.ps, p + "conv2", w, w, 3, stride, 1, false, rng, conv_init);
                blk.bn2 = nn::BatchNorm2d(m.ps, p + "bn2", w);
                blk.conv3 = nn::Conv2d(m.ps, p + "conv3", w, w * expansion, 1, 1, 0, false, rng, conv_init);
                blk.bn3 = nn::BatchNorm2d(m.ps, p + "bn3", w * expansion);
            } else {
                blk.conv1 = nn::Conv2d(m.ps, p + "conv1", in, w, 3, stride, 1, false, rng, conv_init);
                blk.bn1 = nn::BatchNorm2d(m.ps, p + "bn1", w);
                blk.conv2 = nn::Conv2d(m.ps, p + "conv2", w, w, 3, 1, 1, false, rng, conv_init);
                blk.bn2 = nn::BatchNorm2d(m.ps, p + "bn2", w);
            }
            if (stride != 1 || in != w * expansion) {
                blk.has_down = true;
                blk.down_conv = nn::Conv2d(m.ps, p + "downsample.0", in, w * expansion, 1, stride, 0, false, rng,
                                           conv_init);
                blk.down_bn = nn::BatchNorm2d(m.ps, p + "downsample.1", w * expansion);
            }
            in = w * expansion;
            stage.push_back(std::move(blk));
        }
        m.stages.push_back(std::move(stage));
    }
    m.fc = nn::Linear(m.ps, "fc", in, cfg.num_classes, rng);
}

ResNet::~ResNet() = default;
ResNet::ResNet(ResNet&&) noexcept = default;
ResNet& ResNet::operator=(ResNet&&) noexcept = default;

const ResNetConfig& ResNet::config() const noexcept { return impl_->cfg; }
nn::ParameterStore& ResNet::parameters() noexcept { return impl_->ps; }
const nn::ParameterStore& ResNet::parameters() const noexcept { return impl_->ps; }

std::vector<std::string> ResNet::stage_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < impl_->stages.size(); ++i) out.push_back("layer" + std::to_string(i + 1));
    return out;
}

Var ResNet::forward(const Var& x, bool training) const {
    const Impl& m = *impl_;
    return m.head(m.run_stages(m.stem_forward(x, training), 0, static_cast<int>(m.stages.size()), training));
}

Var ResNet::forward_to(const Var& x, const std::string& stage, bool training) const {
    const Impl& m = *impl_;
    return m.run_stages(m.stem_forward(x, training), 0, m.stage_index(stage) + 1, training);
}

Var ResNet::forward_from(const Var& activation, const std::string& stage, bool training) const {
    const Impl& m = *impl_;
    return m.head(m.run_stages(activation, m.stage_index(stage) + 1, static_cast<int>(m.stages.size()), training));
}

}  // namespace tsg::classifier
