#include "tsg/classifier/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tsg/common/error.hpp"
#include "tsg/nn/container.hpp"
#include "tsg/nn/ops.hpp"
#include "tsg/nn/optim.hpp"

namespace fs = std::filesystem;
using tsg::diffusion::ImageTensor;

namespace tsg::classifier {

namespace {

constexpr std::size_t kPreloadLimitBytes = std::size_t{1} << 30;

// Copies a crop of an HWC map into the CHW slot `dst`.
void crop_into(const ImageTensor& f, int y0, int x0, int crop, float* dst) {
    const int C = f.channels();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < crop; ++y) {
            float* row = dst + (static_cast<std::size_t>(c) * crop + y) * crop;
            for (int x = 0; x < crop; ++x) row[x] = f.at(y0 + y, x0 + x, c);
        }
}

double prob_from_logits(const float* z) {
    // softmax over two logits, class 1.
    return 1.0 / (1.0 + std::exp(static_cast<double>(z[0]) - static_cast<double>(z[1])));
}

void load_backbone(ResNet& net, const std::string& path) {
    const nn::Container c = nn::load_container(path);
    for (const auto& e : net.parameters().entries()) {
        if (e.name.rfind("fc.", 0) == 0) continue;
        const nn::Tensor* t = c.find(e.name);
        if (!t) throw ModelError("pretrained backbone lacks tensor " + e.name);
        if (t->shape() != e.var.shape()) throw ModelError("pretrained backbone shape mismatch for " + e.name);
        nn::Var v = e.var;
        v.mutable_value() = *t;
    }
}

}  // namespace

void ClassifierConfig::validate() const {
    net.validate();
    if (crop_size < 0) throw UsageError("crop size must be >= 0");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 2) throw UsageError("batch size must be >= 2 (batch normalisation)");
    if (!(learning_rate > 0)) throw UsageError("learning rate must be positive");
}

json to_json(const ClassifierConfig& c) {
    return {{"net", to_json(c.net)},
            {"crop_size", c.crop_size},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"optimizer", {{"kind", "adam"}, {"learning_rate", c.learning_rate}, {"beta1", 0.9}, {"beta2", 0.999}}},
            {"seed", c.seed},
            {"input_normalization", "minmax"},
            {"train_crop", "random"},
            {"eval_crop", "center"},
            {"pretrained_backbone", c.pretrained_backbone}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
    ClassifierConfig c;
    try {
        c.net = resnet_config_from_json(j.at("net"));
        c.crop_size = j.at("crop_size");
        c.epochs = j.at("epochs");
        c.batch_size = j.at("batch_size");
        c.learning_rate = j.at("optimizer").at("learning_rate");
        c.seed = j.at("seed");
        c.pretrained_backbone = j.value("pretrained_backbone", "");
        if (j.value("input_normalization", "minmax") != "minmax")
            throw ModelError("unsupported input normalization in classifier config");
    } catch (const json::exception& e) {
        throw ModelError(std::string("malformed classifier config: ") + e.what());
    }
    return c;
}

PredictionResult make_prediction(double p) {
    return {p, p >= 0.5 ? data::Label::synthetic : data::Label::real};
}

ImageTensor minmax_normalize(const ImageTensor& f) {
    const auto v = f.values();
    if (v.empty()) return f;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const float mn = *lo, span = *hi - *lo;
    ImageTensor out(f.height(), f.width(), f.channels(), diffusion::ValueRange{0.0f, 1.0f});
    auto o = out.values();
    if (!(span > 0)) return out;
    const float inv = 1.0f / span;
    for (std::size_t i = 0; i < v.size(); ++i) o[i] = std::clamp((v[i] - mn) * inv, 0.0f, 1.0f);
    return out;
}

ClassifierCheckpoint::ClassifierCheckpoint(ResNet net, ClassifierConfig cfg, int fh, int fw)
    : net_(std::move(net)), cfg_(std::move(cfg)), fh_(fh), fw_(fw) {
    if (crop() > fh_ || crop() > fw_)
        throw UsageError("crop " + std::to_string(crop()) + " exceeds feature resolution " + std::to_string(fh_) +
                         "x" + std::to_string(fw_));
}

int ClassifierCheckpoint::crop() const noexcept { return cfg_.crop_size > 0 ? cfg_.crop_size : std::min(fh_, fw_); }

void ClassifierCheckpoint::save(const fs::path& path) const {
    json hist = json::array();
    for (const EpochLog& e : history) {
        json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        row["val_accuracy"] = e.val_accuracy ? json(*e.val_accuracy) : json(nullptr);
        hist.push_back(row);
    }
    const json meta = {{"kind", "classifier"},
                       {"classifier", to_json(cfg_)},
                       {"classes", {{"0", "real"}, {"1", "synthetic"}}},
                       {"feature_shape", {fh_, fw_, net_.config().in_channels}},
                       {"train_manifest_digest", train_manifest_digest},
                       {"history", hist},
                       {"version", version_tag()}};
    nn::save_container(path, meta, net_.parameters());
}

ClassifierCheckpoint ClassifierCheckpoint::load(const fs::path& path) {
    if (!fs::exists(path)) throw ModelError("classifier checkpoint not found: " + path.string());
    const nn::Container c = nn::load_container(path);
    if (c.meta.value("kind", "") != "classifier") throw ModelError("not a classifier checkpoint: " + path.string());
    ClassifierConfig cfg;
    std::vector<int> shape;
    try {
        cfg = classifier_config_from_json(c.meta.at("classifier"));
        shape = c.meta.at("feature_shape").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw ModelError("malformed classifier checkpoint " + path.string() + ": " + e.what());
    }
    if (shape.size() != 3) throw ModelError("malformed feature_shape in " + path.string());
    ResNet net(cfg.net, 0);
    nn::load_parameters(net.parameters(), c);
    ClassifierCheckpoint ck(std::move(net), cfg, shape[0], shape[1]);
    ck.train_manifest_digest = c.meta.value("train_manifest_digest", "");
    for (const json& row : c.meta.value("history", json::array())) {
        EpochLog e;
        e.epoch = row.at("epoch");
        e.train_loss = row.at("train_loss");
        if (!row.at("val_accuracy").is_null()) e.val_accuracy = row.at("val_accuracy").get<double>();
        ck.history.push_back(e);
    }
    return ck;
}

nn::Tensor ClassifierCheckpoint::prepare(std::span<const ImageTensor> feats) const {
    const int crop_side = crop(), C = net_.config().in_channels;
    nn::Tensor batch({static_cast<int>(feats.size()), C, crop_side, crop_side});
    const std::size_t per = static_cast<std::size_t>(C) * crop_side * crop_side;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const ImageTensor& f = feats[i];
        if (f.channels() != C)
            throw DataError("feature has " + std::to_string(f.channels()) + " channels, classifier expects " +
                            std::to_string(C));
        if (f.height() < crop_side || f.width() < crop_side)
            throw UsageError("feature resolution " + std::to_string(f.height()) + "x" + std::to_string(f.width()) +
                             " is smaller than the crop " + std::to_string(crop_side));
        crop_into(minmax_normalize(f), (f.height() - crop_side) / 2, (f.width() - crop_side) / 2, crop_side,
                  batch.data() + i * per);
    }
    return batch;
}

std::vector<PredictionResult> predict_batch(const ClassifierCheckpoint& ckpt, std::span<const ImageTensor> feats,
                                            int batch_size) {
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    nn::GradGuard off(false);
    std::vector<PredictionResult> out;
    out.reserve(feats.size());
    for (std::size_t b0 = 0; b0 < feats.size(); b0 += batch_size) {
        const std::size_t m = std::min<std::size_t>(batch_size, feats.size() - b0);
        const nn::Tensor logits = ckpt.network().forward(nn::Var(ckpt.prepare(feats.subspan(b0, m))), false).value();
        const int k = logits.dim(1);
        for (std::size_t i = 0; i < m; ++i) out.push_back(make_prediction(prob_from_logits(logits.data() + i * k)));
    }
    return out;
}

PredictionResult predict(const ClassifierCheckpoint& ckpt, const features::FeatureMap& f) {
    return predict_batch(ckpt, std::span(&f.data, 1)).front();
}

std::vector<LabeledPrediction> predict_manifest(const ClassifierCheckpoint& ckpt, const data::DatasetManifest& features,
                                                std::optional<data::Split> split, int batch_size) {
    const auto entries = features.select(std::nullopt, split);
    std::vector<LabeledPrediction> out;
    out.reserve(entries.size());
    for (std::size_t b0 = 0; b0 < entries.size(); b0 += batch_size) {
        const std::size_t b1 = std::min(entries.size(), b0 + batch_size);
        std::vector<ImageTensor> feats;
        for (std::size_t i = b0; i < b1; ++i) feats.push_back(features::load_feature(features.resolve(entries[i])).data);
        const auto res = predict_batch(ckpt, feats, batch_size);
        for (std::size_t i = b0; i < b1; ++i)
            out.push_back({entries[i].path, entries[i].label, entries[i].split, res[i - b0]});
    }
    return out;
}

json to_json(const LabeledPrediction& p) {
    return {{"path", p.path},
            {"prob_synthetic", p.result.prob_synthetic},
            {"label", data::to_string(p.result.label)},
            {"truth", data::to_string(p.truth)},
            {"split", data::to_string(p.split)}};
}

ClassifierCheckpoint train_classifier(const data::DatasetManifest& features, const ClassifierConfig& cfg,
                                      const EpochCallback& on_epoch) {
    cfg.validate();
    const auto train = features.select(std::nullopt, data::Split::train);
    const auto val = features.select(std::nullopt, data::Split::val);
    std::size_t n_syn = 0;
    for (const auto& e : train) n_syn += e.label == data::Label::synthetic;
    if (n_syn == 0 || n_syn == train.size())
        throw DataError("classifier training needs both real and synthetic train-split features");

    const features::FeatureMap first = features::load_feature(features.resolve(train.front()));
    const int H = first.data.height(), W = first.data.width(), C = first.data.channels();
    ClassifierConfig run = cfg;
    if (run.net.in_channels != C)
        throw DataError("features have " + std::to_string(C) + " channels, classifier expects " +
                        std::to_string(run.net.in_channels));
    ResNet net(run.net, derive_seed(run.seed, "classifier-init"));
    if (!run.pretrained_backbone.empty()) load_backbone(net, run.pretrained_backbone);
    ClassifierCheckpoint ck(std::move(net), run, H, W);
    ck.train_manifest_digest = features.digest();
    const int crop = ck.crop();

    auto load_normalized = [&](const data::ManifestEntry& e) {
        ImageTensor f = features::load_feature(features.resolve(e)).data;
        if (f.height() != H || f.width() != W || f.channels() != C)
            throw DataError("feature " + e.path + " differs in shape from the first training feature");
        return minmax_normalize(f);
    };
    const bool preload = train.size() * static_cast<std::size_t>(H) * W * C * sizeof(float) <= kPreloadLimitBytes;
    std::vector<ImageTensor> cache;
    if (preload)
        for (const auto& e : train) cache.push_back(load_normalized(e));

    std::vector<ImageTensor> val_feats;
    const bool val_fits = val.size() * static_cast<std::size_t>(H) * W * C * sizeof(float) <= kPreloadLimitBytes;
    if (val_fits)
        for (const auto& e : val) val_feats.push_back(features::load_feature(features.resolve(e)).data);

    nn::Adam adam(ck.network().parameters(), {run.learning_rate, 0.9f, 0.999f, 1e-8f});
    Rng rng = make_rng(run.seed, "classifier-train");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t per = static_cast<std::size_t>(C) * crop * crop;
    const int B = run.batch_size;

    for (int epoch = 1; epoch <= run.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 + 1 < order.size(); b0 += B) {
            const int m = static_cast<int>(std::min<std::size_t>(B, order.size() - b0));
            if (m < 2) break;
            nn::Tensor x({m, C, crop, crop});
            std::vector<int> labels(m);
            for (int i = 0; i < m; ++i) {
                const std::size_t idx = order[b0 + i];
                const ImageTensor f = preload ? cache[idx] : load_normalized(train[idx]);
                const int y0 = std::uniform_int_distribution<int>(0, H - crop)(rng);
                const int x0 = std::uniform_int_distribution<int>(0, W - crop)(rng);
                crop_into(f, y0, x0, crop, x.data() + i * per);
                labels[i] = train[idx].label == data::Label::synthetic ? 1 : 0;
            }
            {
                nn::GradGuard on(true);
                nn::Var loss = nn::softmax_cross_entropy(ck.network().forward(nn::Var(std::move(x)), true), labels);
                loss_sum += static_cast<double>(loss.value()[0]) * m;
                nn::backward(loss);
            }
            adam.step();
            ck.network().parameters().zero_grad();
            seen += m;
        }
        EpochLog log{epoch, seen ? loss_sum / seen : 0.0, std::nullopt};
        if (!val.empty()) {
            std::size_t correct = 0;
            if (val_fits) {
                const auto res = predict_batch(ck, val_feats);
                for (std::size_t i = 0; i < val.size(); ++i) correct += res[i].label == val[i].label;
            } else {
                for (const auto& p : predict_manifest(ck, features, data::Split::val)) correct += p.result.label == p.truth;
            }
            log.val_accuracy = static_cast<double>(correct) / val.size();
        }
        ck.history.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return ck;
}

}  // namespace tsg::classifier
