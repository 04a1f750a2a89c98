#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "tsg/classifier/classifier.hpp"
#include "tsg/diffusion/schedule.hpp"
#include "tsg/eval/evaluation.hpp"
#include "tsg/features/extract.hpp"
#include "tsg/features/preprocess.hpp"
#include "tsg/predictor/handle.hpp"

using namespace tsg;
using diffusion::ImageTensor;
namespace fs = std::filesystem;

namespace {

fs::path workspace() {
    std::ifstream in(fs::path(TSG_TOY_ROOT) / "complete");
    std::string ws;
    std::getline(in, ws);
    REQUIRE_MESSAGE(fs::is_directory(ws), "toy pipeline has not completed under " TSG_TOY_ROOT);
    return ws;
}

std::vector<ImageTensor> held_out_reals(const fs::path& ws, std::size_t n, int size) {
    const auto m = data::load_manifest(ws / "ddpm_manifest.jsonl");
    std::vector<ImageTensor> out;
    for (const auto& e : m.select(data::Label::real, data::Split::val)) {
        if (out.size() == n) break;
        out.push_back(features::preprocess(m.resolve(e), {size, size}));
    }
    REQUIRE(out.size() == n);
    return out;
}

}  // namespace

TEST_CASE("toy DDPM loss decreases") {
    std::ifstream in(workspace() / "ddpm_loss.csv");
    std::string line;
    std::getline(in, line);
    std::vector<double> loss;
    while (std::getline(in, line)) loss.push_back(std::stod(line.substr(line.find(',') + 1)));
    REQUIRE(loss.size() >= 2000);
    const double first = std::accumulate(loss.begin(), loss.begin() + 50, 0.0) / 50;
    // Per-step losses are noisy; compare a window centred on step 2000.
    const double at2000 = std::accumulate(loss.begin() + 1975, loss.begin() + 2025, 0.0) / 50;
    MESSAGE("first 50 steps " << first << ", around step 2000 " << at2000);
    CHECK(at2000 < first);
}

TEST_CASE("toy predictor beats the zero predictor on held-out noised images") {
    const fs::path ws = workspace();
    const auto h = predictor::load_pretrained(ws / "ddpm.tsgckpt");
    const auto s = h->schedule();
    const auto x0 = held_out_reals(ws, 200, h->height());
    std::mt19937_64 rng(17);
    std::normal_distribution<float> g;
    std::uniform_int_distribution<int> pick_t(0, s.T - 1);
    double model = 0, zero = 0;
    for (const auto& x : x0) {
        ImageTensor eps(x.height(), x.width(), x.channels(), diffusion::ValueRange::unbounded());
        for (float& v : eps.values()) v = g(rng);
        const int t = pick_t(rng);
        const ImageTensor xt = diffusion::forward_marginal(x, t, eps, s);
        const ImageTensor pred = h->predict_noise(std::span(&xt, 1), t).front();
        model += diffusion::ddpm_loss(eps, pred);
        ImageTensor none(x.height(), x.width(), x.channels(), diffusion::ValueRange::unbounded());
        zero += diffusion::ddpm_loss(eps, none);
    }
    MESSAGE("held-out loss " << model / x0.size() << " vs zero predictor " << zero / x0.size());
    CHECK(model < zero);
}

TEST_CASE("TSG magnitude shrinks from t=0 to t=50") {
    const fs::path ws = workspace();
    const auto h = predictor::load_pretrained(ws / "ddpm.tsgckpt");
    const auto x = held_out_reals(ws, 100, h->height());
    auto mean_abs = [&](int t) {
        double a = 0;
        std::size_t n = 0;
        for (const auto& f : features::tsg_features(x, *h, t))
            for (float v : f.values()) {
                a += std::abs(v);
                ++n;
            }
        return a / n;
    };
    const double m0 = mean_abs(0), m50 = mean_abs(50);
    MESSAGE("mean |TSG| t=0 " << m0 << ", t=50 " << m50);
    CHECK(m50 <= m0);
}

TEST_CASE("trained classifier separates the toy classes") {
    const fs::path ws = workspace();
    const auto ck = classifier::ClassifierCheckpoint::load(ws / "classifier.tsgckpt");
    auto feats = data::load_manifest(ws / "features" / "features.jsonl");
    double syn = 0, real = 0;
    std::size_t ns = 0, nr = 0;
    for (const auto& p : classifier::predict_manifest(ck, feats, data::Split::val)) {
        if (p.truth == data::Label::synthetic) {
            syn += p.result.prob_synthetic;
            ++ns;
        } else {
            real += p.result.prob_synthetic;
            ++nr;
        }
    }
    CHECK(syn / ns > real / nr);

    const eval::EvalMatrix m = eval::cross_validate({{"toy", &ck}}, {{"toy", feats}});
    MESSAGE("diagonal accuracy " << m.acc[0][0]);
    CHECK(m.acc[0][0] >= 0.85);
}
