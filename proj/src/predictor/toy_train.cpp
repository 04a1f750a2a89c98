#include <cmath>
#include <cstring>
#include <random>

#include "tsg/common/error.hpp"
#include "tsg/common/rng.hpp"
#include "tsg/diffusion/ddim.hpp"
#include "tsg/features/preprocess.hpp"
#include "tsg/nn/ops.hpp"
#include "tsg/nn/optim.hpp"
#include "tsg/predictor/handle.hpp"

namespace tsg::predictor {

void ToyUNetConfig::validate() const {
    if (base_channels <= 0 || depth <= 0 || time_embedding_dim <= 0 || resolution <= 0 || T <= 0 ||
        num_res_blocks <= 0 || norm_groups <= 0)
        throw UsageError("toy U-Net dimensions must be positive");
    if (resolution % (1 << depth) != 0)
        throw UsageError("toy resolution " + std::to_string(resolution) + " is not divisible by 2^" + std::to_string(depth));
    if (base_channels % norm_groups != 0) throw UsageError("base_channels must be divisible by norm_groups");
}

UNetConfig ToyUNetConfig::to_unet() const {
    validate();
    UNetConfig c;
    c.image_size = resolution;
    c.model_channels = base_channels;
    c.out_channels = 3;
    c.num_res_blocks = num_res_blocks;
    c.channel_mult.assign(depth + 1, 2);
    c.channel_mult[0] = 1;
    c.conv_resample = false;
    c.num_heads = 1;
    c.norm_groups = norm_groups;
    c.middle_attention = bottleneck_attention;
    c.time_embed_channels = time_embedding_dim;
    return c;
}

json to_json(const ToyUNetConfig& c) {
    return {{"base_channels", c.base_channels}, {"depth", c.depth},
            {"time_embedding_dim", c.time_embedding_dim}, {"resolution", c.resolution},
            {"T", c.T}, {"num_res_blocks", c.num_res_blocks},
            {"norm_groups", c.norm_groups}, {"bottleneck_attention", c.bottleneck_attention}};
}

ToyUNetConfig toy_config_from_json(const json& j) {
    ToyUNetConfig c;
    c.base_channels = j.value("base_channels", c.base_channels);
    c.depth = j.value("depth", c.depth);
    c.time_embedding_dim = j.value("time_embedding_dim", c.time_embedding_dim);
    c.resolution = j.value("resolution", c.resolution);
    c.T = j.value("T", c.T);
    c.num_res_blocks = j.value("num_res_blocks", c.num_res_blocks);
    c.norm_groups = j.value("norm_groups", c.norm_groups);
    c.bottleneck_attention = j.value("bottleneck_attention", c.bottleneck_attention);
    c.validate();
    return c;
}

ToyTrainResult train_toy_ddpm(const data::DatasetManifest& manifest, const ToyUNetConfig& cfg,
                              const diffusion::NoiseSchedule& sched, const ToyTrainConfig& train) {
    cfg.validate();
    if (train.steps < 1) throw UsageError("training steps must be >= 1");
    if (train.batch_size < 1) throw UsageError("batch size must be >= 1");
    if (sched.T != cfg.T) throw UsageError("schedule length differs from the toy config's T");
    const auto entries = manifest.select(data::Label::real, data::Split::train);
    if (entries.empty()) throw DataError("toy training needs real train-split images");

    const int res = cfg.resolution;
    const std::size_t per = 3ull * res * res;
    std::vector<float> images(entries.size() * per);
    {
        std::vector<diffusion::ImageTensor> one(1);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            one[0] = features::preprocess(manifest.resolve(entries[i]), {res, res});
            const nn::Tensor t = diffusion::to_nchw(one);
            std::memcpy(images.data() + i * per, t.data(), per * sizeof(float));
        }
    }

    UNet net(cfg.to_unet(), derive_seed(train.seed, "toy-unet"));
    nn::Adam adam(net.parameters(), {train.learning_rate, 0.9f, 0.999f, 1e-8f});
    Rng rng = make_rng(train.seed, "toy-ddpm-batches");
    std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);
    std::uniform_int_distribution<int> pick_t(0, sched.T - 1);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    ToyTrainResult result;
    result.losses.reserve(train.steps);
    const int B = train.batch_size;
    for (int step = 1; step <= train.steps; ++step) {
        nn::Tensor xt({B, 3, res, res}), eps({B, 3, res, res});
        std::vector<float> ts(B);
        for (int b = 0; b < B; ++b) {
            const float* x0 = images.data() + pick(rng) * per;
            const int t = pick_t(rng);
            ts[b] = static_cast<float>(t);
            const diffusion::Coefficients c = diffusion::marginal_coefficients(sched, t);
            for (std::size_t i = 0; i < per; ++i) {
                const float e = gauss(rng);
                eps[b * per + i] = e;
                xt[b * per + i] = static_cast<float>(c.signal * x0[i] + c.noise * e);
            }
        }
        double loss_value;
        {
            nn::GradGuard on(true);
            nn::Var pred = net.forward(nn::Var(std::move(xt)), ts);
            nn::Var loss = nn::mse_loss(pred, eps);
            loss_value = loss.value()[0];
            nn::backward(loss);
        }
        adam.step();
        net.parameters().zero_grad();
        result.losses.push_back(loss_value);
        if (train.on_step) train.on_step(step, loss_value);
    }

    PredictorMeta meta;
    meta.height = meta.width = res;
    meta.channels = 3;
    meta.T = sched.T;
    meta.source = Source::toy_trained;
    meta.schedule = "linear";
    meta.beta_start = sched.beta_start;
    meta.beta_end = sched.beta_end;
    meta.tag = "toy-" + hex_digest(to_json(cfg).dump() + manifest.digest() + std::to_string(train.seed) + "/" +
                                   std::to_string(train.steps))
                            .substr(0, 12);
    result.handle = std::make_shared<NoisePredictorHandle>(std::move(net), meta);
    return result;
}

std::vector<diffusion::ImageTensor> generate_samples(const NoisePredictorHandle& h, int n, int k, std::uint64_t seed,
                                                     const diffusion::NoiseSchedule& sched, int batch_size) {
    if (n < 1) throw UsageError("sample count must be >= 1");
    if (k < 1 || k > sched.T) throw UsageError("DDIM step count must be in [1, T]");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    Rng rng = make_rng(seed, "generate-samples");
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    const int c = h.channels(), H = h.height(), W = h.width();
    std::vector<diffusion::ImageTensor> out;
    out.reserve(n);
    for (int b0 = 0; b0 < n; b0 += batch_size) {
        const int m = std::min(batch_size, n - b0);
        nn::Tensor z({m, c, H, W});
        for (float& v : z.storage()) v = gauss(rng);
        const nn::Tensor x = diffusion::ddim_denoise(z, k, h, sched, true);
        for (diffusion::ImageTensor& img : diffusion::from_nchw(x)) {
            img.clamp_to(diffusion::ValueRange::model());
            out.push_back(std::move(img));
        }
    }
    return out;
}

}  // namespace tsg::predictor
