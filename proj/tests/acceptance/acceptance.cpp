// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--toy-root DIR] [--only N]
//
// Criteria 2-5 read the closed-loop toy workspace written by
// scripts/toy_pipeline.sh (DIR/complete holds its path).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <opencv2/imgcodecs.hpp>

#include "support/temp_dir.hpp"
#include "tsg/classifier/classifier.hpp"
#include "tsg/common/error.hpp"
#include "tsg/data/genimage.hpp"
#include "tsg/data/manifest.hpp"
#include "tsg/diffusion/schedule.hpp"
#include "tsg/eval/evaluation.hpp"
#include "tsg/eval/metrics.hpp"
#include "tsg/explain/gradcam.hpp"
#include "tsg/features/extract.hpp"
#include "tsg/features/preprocess.hpp"
#include "tsg/nn/container.hpp"
#include "tsg/predictor/handle.hpp"

using namespace tsg;
using diffusion::ImageTensor;
using diffusion::ValueRange;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double limit_seconds;
    std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream o;
    o << std::setprecision(digits) << v;
    return o.str();
}

fs::path g_toy_root;

fs::path toy_workspace() {
    const fs::path marker = g_toy_root / "complete";
    if (!fs::exists(marker))
        throw DataError("toy closed loop has not completed (no " + marker.string() + "); run scripts/toy_pipeline.sh");
    std::ifstream in(marker);
    std::string ws;
    std::getline(in, ws);
    if (!fs::is_directory(ws)) throw DataError("toy workspace " + ws + " is missing");
    return ws;
}

std::vector<ImageTensor> load_images(const data::DatasetManifest& m, const std::vector<data::ManifestEntry>& es,
                                     int size) {
    std::vector<ImageTensor> out;
    for (const auto& e : es) out.push_back(features::preprocess(m.resolve(e), {size, size}));
    return out;
}

// ---------------------------------------------------------------------------

Outcome schedule_consistency() {
    const int T = 50;
    std::mt19937_64 rng(20240501);
    std::uniform_real_distribution<double> beta(1e-4, 0.08);
    std::vector<double> betas(T);
    for (double& b : betas) b = beta(rng);
    const auto s = diffusion::NoiseSchedule::from_betas(betas);

    // Analytic composition of the one-step kernels, from the raw betas.
    double mean = 1.0, var = 0.0, worst = 0.0;
    for (int t = 0; t < T; ++t) {
        mean *= std::sqrt(1.0 - betas[t]);
        var = (1.0 - betas[t]) * var + betas[t];
        const auto c = diffusion::marginal_coefficients(s, t);
        worst = std::max({worst, std::abs(c.signal - mean), std::abs(c.noise - std::sqrt(var))});
    }

    // Monte Carlo: 1e5 chains of stepwise noising against the closed-form marginal.
    const int draws = 100000, H = 2, W = 2, C = 3, P = H * W * C;
    ImageTensor x0(H, W, C);
    for (int i = 0; i < P; ++i) x0.values()[i] = -0.9f + 1.8f * i / (P - 1);
    const std::vector<int> probes{0, T / 2, T - 1};
    std::map<int, std::vector<double>> sum, sq, msum, msq;
    for (int t : probes) sum[t] = sq[t] = msum[t] = msq[t] = std::vector<double>(P, 0.0);
    std::normal_distribution<float> g;
    ImageTensor eps(H, W, C, ValueRange::unbounded());
    auto fill = [&] {
        for (float& v : eps.values()) v = g(rng);
    };
    for (int d = 0; d < draws; ++d) {
        fill();
        ImageTensor x = diffusion::forward_marginal(x0, 0, eps, s);
        for (int t = 0; t < T; ++t) {
            if (t > 0) {
                fill();
                x = diffusion::forward_step(x, t, eps, s);
            }
            if (!sum.count(t)) continue;
            fill();
            const ImageTensor direct = diffusion::forward_marginal(x0, t, eps, s);
            for (int i = 0; i < P; ++i) {
                sum[t][i] += x.values()[i];
                sq[t][i] += double(x.values()[i]) * x.values()[i];
                msum[t][i] += direct.values()[i];
                msq[t][i] += double(direct.values()[i]) * direct.values()[i];
            }
        }
    }
    double worst_z = 0.0;
    for (int t : probes) {
        const double v = 1.0 - s.alpha_bars[t];
        for (int i = 0; i < P; ++i) {
            const double m1 = sum[t][i] / draws, v1 = sq[t][i] / draws - m1 * m1;
            const double m2 = msum[t][i] / draws, v2 = msq[t][i] / draws - m2 * m2;
            const double se_mean = std::sqrt(2.0 * v / draws);
            const double se_var = v * std::sqrt(2.0 / (draws - 1)) * std::sqrt(2.0);
            worst_z = std::max({worst_z, std::abs(m1 - m2) / se_mean, std::abs(v1 - v2) / se_var});
        }
    }
    return {worst <= 1e-12 && worst_z <= 4.0,
            "closed-form max error " + fmt(worst, 3) + " (<= 1e-12); MC max |z| " + fmt(worst_z, 3) + " (<= 4)"};
}

Outcome speed() {
    const fs::path ws = toy_workspace();
    const auto h = predictor::load_pretrained(ws / "ddpm.tsgckpt");
    const auto m = data::load_manifest(ws / "manifest.jsonl");
    auto es = m.select(data::Label::real, data::Split::val);
    if (es.size() < 100) throw DataError("toy manifest has fewer than 100 held-out real images");
    es.resize(100);
    const auto images = load_images(m, es, h->height());
    const auto s = h->schedule();
    const eval::TimingReport tsg = eval::timing_benchmark(features::Method::tsg, *h, s, images, 16, 20, 100);
    const eval::TimingReport dire = eval::timing_benchmark(features::Method::dire, *h, s, images, 16, 20, 100);
    const double ratio = dire.wall_seconds / tsg.wall_seconds;
    const bool ok = tsg.predictor_calls == 100 && dire.predictor_calls == 4000 && ratio >= 5.0;
    return {ok, "calls TSG " + std::to_string(tsg.predictor_calls) + "/100, DIRE " +
                    std::to_string(dire.predictor_calls) + "/4000; wall " + fmt(tsg.wall_seconds) + " s vs " +
                    fmt(dire.wall_seconds) + " s, DIRE/TSG = " + fmt(ratio, 3) + " (>= 5)"};
}

Outcome dire_hypothesis() {
    const fs::path ws = toy_workspace();
    const auto h = predictor::load_pretrained(ws / "ddpm.tsgckpt");
    const auto m = data::load_manifest(ws / "manifest.jsonl");
    // Held out means unseen by the diffusion model: val split of its training manifest.
    const auto ddpm = data::load_manifest(ws / "ddpm_manifest.jsonl");
    std::set<std::string> seen;
    for (const auto& e : ddpm.select(std::nullopt, data::Split::train)) seen.insert(ddpm.resolve(e).string());

    std::vector<data::ManifestEntry> real, fake;
    for (const auto& e : m.entries()) {
        if (e.label == data::Label::real && !seen.count(m.resolve(e).string()) && real.size() < 200)
            real.push_back(e);
        if (e.label == data::Label::synthetic && e.split == data::Split::val && fake.size() < 200) fake.push_back(e);
    }
    if (real.size() < 200 || fake.size() < 200) throw DataError("need 200 held-out real and 200 generated images");

    const auto s = h->schedule();
    auto errors = [&](const std::vector<data::ManifestEntry>& es) {
        const auto imgs = load_images(m, es, h->height());
        std::vector<double> out;
        for (std::size_t b = 0; b < imgs.size(); b += 50) {
            const auto chunk = std::span(imgs).subspan(b, std::min<std::size_t>(50, imgs.size() - b));
            for (const auto& f : features::dire_features(chunk, *h, s, 20)) {
                double a = 0;
                for (float v : f.values()) a += std::abs(v);
                out.push_back(a / f.size());
            }
        }
        return out;
    };
    const auto e_fake = errors(fake), e_real = errors(real);
    const auto r = eval::bootstrap_mean_difference(e_fake, e_real, 10000, 99, 0.95);
    const double mf = std::accumulate(e_fake.begin(), e_fake.end(), 0.0) / e_fake.size();
    const double mr = std::accumulate(e_real.begin(), e_real.end(), 0.0) / e_real.size();
    return {mf < mr && r.lower > 0.0, "mean DIRE fake " + fmt(mf) + " vs real " + fmt(mr) +
                                          "; 95% one-sided lower bound on real - fake " + fmt(r.lower, 3) + " (> 0)"};
}

struct LoopScores {
    double acc = 0, auc = 0;
};

LoopScores score(const fs::path& ckpt, const fs::path& features) {
    const auto ck = classifier::ClassifierCheckpoint::load(ckpt);
    const auto m = data::load_manifest(features / "features.jsonl");
    const auto preds = classifier::predict_manifest(ck, m, data::Split::val);
    std::vector<data::Label> truth, pred;
    std::vector<double> prob;
    for (const auto& p : preds) {
        truth.push_back(p.truth);
        pred.push_back(p.result.label);
        prob.push_back(p.result.prob_synthetic);
    }
    return {eval::accuracy(pred, truth), eval::auc(prob, truth)};
}

int late_t(const fs::path& ws) {
    for (const auto& de : fs::directory_iterator(ws)) {
        const std::string n = de.path().filename().string();
        if (n.rfind("features_t", 0) == 0 && de.is_directory()) return std::stoi(n.substr(10));
    }
    throw DataError("no late-timestep features in " + ws.string());
}

Outcome closed_loop() {
    const fs::path ws = toy_workspace();
    const auto n = data::load_manifest(ws / "manifest.jsonl").tally();
    const auto main = score(ws / "classifier.tsgckpt", ws / "features");
    const auto perm = score(ws / "classifier_permuted.tsgckpt", ws / "features");
    const bool ok = main.acc >= 0.85 && main.auc >= 0.90 && perm.acc >= 0.40 && perm.acc <= 0.60;
    return {ok, "val accuracy " + fmt(main.acc) + " (>= 0.85), AUC " + fmt(main.auc) +
                    " (>= 0.90); permuted control accuracy " + fmt(perm.acc) + " (in [0.40, 0.60]); val n = " +
                    std::to_string(n.real_val + n.synthetic_val)};
}

Outcome timestep_ablation() {
    const fs::path ws = toy_workspace();
    const int t = late_t(ws);
    const auto early = score(ws / "classifier.tsgckpt", ws / "features");
    const auto late = score(ws / ("classifier_t" + std::to_string(t) + ".tsgckpt"), ws / ("features_t" + std::to_string(t)));
    return {early.acc >= late.acc - 0.02,
            "accuracy t=0 " + fmt(early.acc) + " vs t=" + std::to_string(t) + " " + fmt(late.acc) + " (t=0 >= late - 0.02)"};
}

Outcome jpeg_builder() {
    testing::TempDir tmp;
    const std::vector<int> qualities{50, 75, 90, 96, 100};
    std::set<std::string> expected;
    int worst = 0;
    cv::RNG rng(5);
    for (const std::string cls : {"ai", "nature"})
        for (int q : qualities)
            for (int i = 0; i < 20; ++i) {
                const fs::path dir = tmp / "gen" / (i % 4 == 0 ? "val" : "train") / cls;
                fs::create_directories(dir);
                cv::Mat img(48, 48, CV_8UC3);
                rng.fill(img, cv::RNG::UNIFORM, 0, 256);
                const fs::path p = dir / ("q" + std::to_string(q) + "_" + std::to_string(i) + ".jpg");
                if (!cv::imwrite(p.string(), img, {cv::IMWRITE_JPEG_QUALITY, q})) throw DataError("imwrite failed");
                worst = std::max(worst, std::abs(data::estimate_jpeg_quality(p) - q));
                if (q >= 96) expected.insert(p.string());
            }
    const auto scanned = data::scan_genimage_root(tmp.path());
    data::UnbiasedFilterConfig cfg;
    cfg.min_quality = 96;
    const auto kept = data::filter_unbiased(scanned, cfg);
    std::set<std::string> got;
    for (const auto& e : kept.entries()) got.insert(kept.resolve(e).string());
    const auto t = kept.tally();
    const bool balanced = t.real_train == t.synthetic_train && t.real_val == t.synthetic_val;
    return {scanned.size() == 200 && got == expected && balanced && worst <= 1,
            "scanned " + std::to_string(scanned.size()) + ", kept " + std::to_string(got.size()) + "/" +
                std::to_string(expected.size()) + " expected (exact match: " + (got == expected ? "yes" : "no") +
                "), balanced " + (balanced ? "yes" : "no") + ", max quality error " + std::to_string(worst) +
                " (<= 1)"};
}

Outcome gradcam_correctness() {
    classifier::ClassifierConfig cfg;
    cfg.net.arch = classifier::Arch::resnet_cifar;
    cfg.net.cifar_width = 8;
    cfg.net.cifar_blocks = 2;
    cfg.crop_size = 0;
    const classifier::ClassifierCheckpoint ck(classifier::ResNet(cfg.net, 41), cfg, 32, 32);
    std::mt19937_64 rng(42);
    std::normal_distribution<float> g;
    auto random_feature = [&] {
        features::FeatureMap f{ImageTensor(32, 32, 3, ValueRange::unbounded()), {}};
        for (float& v : f.data.values()) v = g(rng);
        return f;
    };

    const auto f = random_feature();
    const nn::Tensor x = ck.prepare(std::span(&f.data, 1));
    const explain::CamTap tap = explain::gradcam_tap(ck.network(), x, {"", 1});
    std::uniform_int_distribution<std::size_t> pick(0, tap.activation.size() - 1);
    double worst_rel = 0;
    for (int probe = 0; probe < 10; ++probe) {
        const std::size_t i = pick(rng);
        const float h = 0.5f;
        nn::Tensor up = tap.activation, down = tap.activation;
        up[i] += h;
        down[i] -= h;
        const double lu = ck.network().forward_from(nn::Var(up), tap.layer, false).value()[1];
        const double ld = ck.network().forward_from(nn::Var(down), tap.layer, false).value()[1];
        const double fd = (lu - ld) / (2.0 * h);
        worst_rel = std::max(worst_rel, std::abs(fd - tap.gradient[i]) / std::max(std::abs(fd), 1e-6));
    }

    int violations = 0, degenerate = 0;
    for (int n = 0; n < 100; ++n) {
        const auto hm = explain::gradcam(ck, random_feature());
        const auto [lo, hi] = std::minmax_element(hm.data.begin(), hm.data.end());
        if (hm.data.size() != static_cast<std::size_t>(hm.height) * hm.width || hm.height != 32 || hm.width != 32)
            ++violations;
        if (*lo < 0.0f) ++violations;
        if (hm.degenerate) {
            ++degenerate;
            if (*hi != 0.0f) ++violations;
        } else if (*hi != 1.0f) {
            ++violations;
        }
    }
    return {worst_rel <= 1e-3 && violations == 0,
            "max relative FD error " + fmt(worst_rel, 3) + " over 10 probes at " + tap.layer +
                " (<= 1e-3); invariant violations " + std::to_string(violations) + "/100 (degenerate maps " +
                std::to_string(degenerate) + ")"};
}

Outcome format_round_trips() {
    testing::TempDir tmp;
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failed.push_back(what);
    };
    std::mt19937_64 rng(8);
    std::normal_distribution<float> g;

    features::FeatureMap f{ImageTensor(9, 7, 3, ValueRange::unbounded()),
                           {features::Method::tsg, 0, "toy-abc", "img/a.png", "2026-01-01T00:00:00Z"}};
    for (float& v : f.data.values()) v = g(rng);
    f.data.values()[0] = -0.0f;
    f.data.values()[1] = 1e-38f;
    features::save_feature(f, tmp / "a.tsgfeat");
    const auto f2 = features::load_feature(tmp / "a.tsgfeat");
    expect(f2 == f && features::encode_feature(f2) == read_text_file(tmp / "a.tsgfeat"), "feature file");
    expect(std::signbit(f2.data.values()[0]), "feature negative zero");

    std::vector<data::ManifestEntry> entries{{"x/a.jpg", data::Label::synthetic, "adm", data::Split::train, 96},
                                             {"x/b.png", data::Label::real, "adm", data::Split::val, std::nullopt}};
    const data::DatasetManifest m(entries, {{"note", "round trip"}}, tmp.path().string());
    data::save_manifest(m, tmp / "m.jsonl");
    const auto m2 = data::load_manifest(tmp / "m.jsonl");
    data::save_manifest(m2, tmp / "m2.jsonl");
    expect(m2.entries() == m.entries() && m2.digest() == m.digest() &&
               read_text_file(tmp / "m.jsonl") == read_text_file(tmp / "m2.jsonl"),
           "manifest");

    classifier::ClassifierConfig cc;
    cc.net.arch = classifier::Arch::resnet_cifar;
    cc.net.cifar_width = 4;
    cc.net.cifar_blocks = 1;
    cc.crop_size = 0;
    classifier::ClassifierCheckpoint ck(classifier::ResNet(cc.net, 3), cc, 9, 9);
    ck.history.push_back({1, 0.5, 0.75});
    ck.save(tmp / "c.tsgckpt");
    const auto ck2 = classifier::ClassifierCheckpoint::load(tmp / "c.tsgckpt");
    ck2.save(tmp / "c2.tsgckpt");
    features::FeatureMap probe{ImageTensor(9, 9, 3, ValueRange::unbounded()), {}};
    for (float& v : probe.data.values()) v = g(rng);
    expect(read_binary_file(tmp / "c.tsgckpt") == read_binary_file(tmp / "c2.tsgckpt") &&
               classifier::predict(ck, probe).prob_synthetic == classifier::predict(ck2, probe).prob_synthetic,
           "classifier checkpoint");

    predictor::ToyUNetConfig toy;
    toy.base_channels = 8;
    toy.norm_groups = 4;
    toy.resolution = 8;
    toy.T = 20;
    predictor::PredictorMeta meta;
    meta.height = meta.width = 8;
    meta.T = 20;
    meta.tag = "toy-roundtrip";
    const predictor::NoisePredictorHandle h(predictor::UNet(toy.to_unet(), 5), meta);
    h.save(tmp / "p.tsgckpt");
    const auto h2 = predictor::load_pretrained(tmp / "p.tsgckpt");
    h2->save(tmp / "p2.tsgckpt");
    ImageTensor xin(8, 8, 3);
    for (float& v : xin.values()) v = std::tanh(g(rng));
    expect(read_binary_file(tmp / "p.tsgckpt") == read_binary_file(tmp / "p2.tsgckpt") &&
               h.predict_noise(std::span(&xin, 1), 3).front() == h2->predict_noise(std::span(&xin, 1), 3).front(),
           "predictor checkpoint");

    eval::EvalMatrix em;
    em.train_tags = em.test_tags = {"adm", "sdv15"};
    em.acc = {{0.9876543, 0.5}, {1.0 / 3.0, 1.0}};
    em.counts = {{100, 80}, {100, 80}};
    em.auc = {{0.99, 0.51}, {0.42, 1.0}};
    eval::emit_reports(em, tmp / "r1" / "matrix");
    const auto em2 = eval::eval_matrix_from_json(read_json_file(tmp / "r1" / "matrix.json"));
    eval::emit_reports(em2, tmp / "r2" / "matrix");
    expect(em2.acc == em.acc && em2.counts == em.counts && em2.auc == em.auc &&
               read_text_file(tmp / "r1" / "matrix.csv") == read_text_file(tmp / "r2" / "matrix.csv"),
           "eval matrix");

    std::string detail = "feature, manifest, classifier and predictor checkpoints, EvalMatrix CSV/JSON";
    if (!failed.empty()) {
        detail = "failed:";
        for (const auto& s : failed) detail += " " + s;
    }
    return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    g_toy_root = TSG_TOY_ROOT;
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--toy-root" && i + 1 < argc) g_toy_root = argv[++i];
        else if (a == "--only" && i + 1 < argc) only = std::stoi(argv[++i]);
        else {
            std::cerr << "usage: acceptance [--toy-root DIR] [--only N]\n";
            return 2;
        }
    }

    const std::vector<Criterion> criteria{
        {"schedule consistency", 30, schedule_consistency},
        {"structural speed", 300, speed},
        {"DIRE hypothesis direction", 1200, dire_hypothesis},
        {"closed-loop detection", 0, closed_loop},
        {"timestep ablation direction", 0, timestep_ablation},
        {"JPEG-unbiased builder", 60, jpeg_builder},
        {"Grad-CAM correctness", 300, gradcam_correctness},
        {"format round-trips", 60, format_round_trips},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only && only != static_cast<int>(i) + 1) continue;
        const Criterion& c = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt(secs, 3) + " s";
        if (c.limit_seconds > 0) {
            timing += " of " + fmt(c.limit_seconds, 4) + " s";
            if (secs > c.limit_seconds) {
                o.pass = false;
                timing += ", over budget";
            }
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << i + 1 << "] " << c.name << ": " << o.detail << " ("
                  << timing << ")" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
