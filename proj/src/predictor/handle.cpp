#include "tsg/predictor/handle.hpp"

#include <algorithm>
#include <cstring>

#include "tsg/common/error.hpp"
#include "tsg/nn/container.hpp"

namespace fs = std::filesystem;

namespace tsg::predictor {

const char* to_string(Source s) noexcept { return s == Source::toy_trained ? "toy_trained" : "pretrained_checkpoint"; }

json to_json(const PredictorMeta& m) {
    return {{"resolution", {m.height, m.width}},
            {"channels", m.channels},
            {"T", m.T},
            {"conditional", m.conditional},
            {"source", to_string(m.source)},
            {"tag", m.tag},
            {"schedule", {{"kind", m.schedule}, {"beta_start", m.beta_start}, {"beta_end", m.beta_end}}}};
}

PredictorMeta predictor_meta_from_json(const json& j) {
    try {
        PredictorMeta m;
        const auto res = j.at("resolution").get<std::vector<int>>();
        if (res.size() != 2) throw ModelError("resolution must be [H, W]");
        m.height = res[0];
        m.width = res[1];
        m.channels = j.at("channels");
        m.T = j.at("T");
        m.conditional = j.value("conditional", false);
        const std::string src = j.at("source");
        if (src == "toy_trained") m.source = Source::toy_trained;
        else if (src == "pretrained_checkpoint") m.source = Source::pretrained_checkpoint;
        else throw ModelError("unknown predictor source '" + src + "'");
        m.tag = j.value("tag", "");
        const json& s = j.at("schedule");
        m.schedule = s.at("kind");
        m.beta_start = s.at("beta_start");
        m.beta_end = s.at("beta_end");
        if (m.height <= 0 || m.width <= 0 || m.channels <= 0 || m.T <= 0)
            throw ModelError("predictor metadata has non-positive dimensions");
        return m;
    } catch (const json::exception& e) {
        throw ModelError(std::string("malformed predictor metadata: ") + e.what());
    }
}

NoisePredictorHandle::NoisePredictorHandle(UNet net, PredictorMeta meta) : net_(std::move(net)), meta_(std::move(meta)) {
    const UNetConfig& c = net_.config();
    if (meta_.conditional) throw ModelError("class-conditional predictors are not supported");
    if (c.in_channels != meta_.channels || (c.out_channels != meta_.channels && c.out_channels != 2 * meta_.channels))
        throw ModelError("network channels do not match predictor metadata");
    if (c.image_size != meta_.height || meta_.height != meta_.width)
        throw ModelError("network resolution does not match predictor metadata");
}

diffusion::NoiseSchedule NoisePredictorHandle::schedule() const {
    if (meta_.schedule != "linear") throw ModelError("unsupported schedule kind '" + meta_.schedule + "'");
    return diffusion::make_linear_schedule(meta_.T, meta_.beta_start, meta_.beta_end);
}

nn::Tensor NoisePredictorHandle::evaluate(const nn::Tensor& batch, int t) const {
    nn::GradGuard off(false);
    const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    const std::size_t per = static_cast<std::size_t>(c) * h * w;
    nn::Tensor out(batch.shape());
    for (int b0 = 0; b0 < n; b0 += max_batch_) {
        const int m = std::min(max_batch_, n - b0);
        nn::Tensor chunk({m, c, h, w});
        std::memcpy(chunk.data(), batch.data() + b0 * per, m * per * sizeof(float));
        const std::vector<float> ts(m, static_cast<float>(t));
        const nn::Tensor y = net_.forward(nn::Var(std::move(chunk)), ts).value();
        const int oc = y.dim(1);
        // Learned-variance models emit [eps, variance]; keep eps.
        for (int i = 0; i < m; ++i)
            std::memcpy(out.data() + (b0 + i) * per, y.data() + static_cast<std::size_t>(i) * oc * h * w,
                        per * sizeof(float));
    }
    return out;
}

void NoisePredictorHandle::save(const fs::path& path) const {
    nn::save_container(path, {{"predictor", to_json(meta_)}, {"unet", to_json(net_.config())}}, net_.parameters());
}

std::shared_ptr<NoisePredictorHandle> load_pretrained(const fs::path& path, const ExpectedMeta& expected) {
    if (!fs::exists(path)) throw ModelError("predictor checkpoint not found: " + path.string());
    nn::Container c = nn::load_container(path);
    for (const auto& t : c.tensors)
        if (t.name.rfind("label_emb", 0) == 0) throw ModelError("class-conditional checkpoint rejected: " + path.string());
    if (!c.meta.contains("predictor") || !c.meta.contains("unet"))
        throw ModelError("checkpoint lacks predictor metadata: " + path.string());
    PredictorMeta meta = predictor_meta_from_json(c.meta.at("predictor"));
    if (meta.conditional) throw ModelError("class-conditional checkpoint rejected: " + path.string());
    if (expected.resolution && (meta.height != *expected.resolution || meta.width != *expected.resolution))
        throw ModelError("checkpoint resolution " + std::to_string(meta.height) + "x" + std::to_string(meta.width) +
                         " does not match expected " + std::to_string(*expected.resolution));
    if (expected.T && meta.T != *expected.T)
        throw ModelError("checkpoint T = " + std::to_string(meta.T) + " does not match expected " + std::to_string(*expected.T));
    UNet net(unet_config_from_json(c.meta.at("unet")), 0);
    nn::load_parameters(net.parameters(), c);
    return std::make_shared<NoisePredictorHandle>(std::move(net), std::move(meta));
}

}  // namespace tsg::predictor
