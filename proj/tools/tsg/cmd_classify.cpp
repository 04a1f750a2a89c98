#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "app.hpp"
#include "tsg/classifier/classifier.hpp"
#include "tsg/common/error.hpp"
#include "tsg/eval/evaluation.hpp"
#include "tsg/eval/metrics.hpp"
#include "tsg/explain/gradcam.hpp"

namespace fs = std::filesystem;

namespace tsg::cli {

namespace {

struct TrainArgs {
    fs::path features, out;
    std::string arch = "resnet50";
    classifier::ClassifierConfig cfg;
    bool permute = false;
};

struct EvalArgs {
    fs::path checkpoint, features, out;
    std::string split = "val";
    std::string tag = "test";
    int batch_size = 64;
};

struct CrossvalArgs {
    std::vector<std::string> checkpoints, features, diff_based, gan;
    fs::path out;
    std::string split = "val";
};

struct GradcamArgs {
    fs::path checkpoint, out, features, image;
    std::vector<fs::path> feature_files;
    std::string layer;
    std::optional<int> target_class;
    double alpha = 0.5;
    std::size_t limit = 16;
};

std::optional<data::Split> parse_split_or_all(const std::string& s) {
    if (s == "all") return std::nullopt;
    return data::parse_split(s);
}

std::pair<std::string, std::string> split_tagged(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
        throw UsageError("expected TAG=PATH, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(digits) << v;
    return o.str();
}

}  // namespace

void register_train(CLI::App& app, Context& ctx, Action* slot) {
    static TrainArgs a;
    CLI::App* t = app.add_subcommand("train", "Train the binary real/synthetic classifier on feature files");
    t->add_option("--features", a.features, "Feature manifest, or the extraction output directory")->required();
    t->add_option("--out", a.out, "Output checkpoint")->required();
    t->add_option("--arch", a.arch, "resnet50, resnet18 or resnet_cifar")->capture_default_str();
    t->add_option("--epochs", a.cfg.epochs)->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--batch-size", a.cfg.batch_size)->capture_default_str()->check(CLI::Range(2, 1 << 20));
    t->add_option("--lr", a.cfg.learning_rate)->capture_default_str();
    t->add_option("--crop-size", a.cfg.crop_size, "Square training crop; 0 uses the full feature")
        ->capture_default_str();
    t->add_option("--cifar-width", a.cfg.net.cifar_width)->capture_default_str();
    t->add_option("--cifar-blocks", a.cfg.net.cifar_blocks)->capture_default_str();
    t->add_option("--pretrained-backbone", a.cfg.pretrained_backbone, "Weights container loaded before training");
    t->add_flag("--permute-labels", a.permute, "Shuffle train-split labels (chance-level control)");
    t->footer("Invalid combinations: --cifar-width/--cifar-blocks without --arch resnet_cifar; "
              "--pretrained-backbone with --arch resnet_cifar; --crop-size larger than the features.");
    on_run(t, ctx, slot, [](Context& c) {
        a.cfg.net.arch = classifier::parse_arch(a.arch);
        const bool cifar = a.cfg.net.arch == classifier::Arch::resnet_cifar;
        const CLI::App* me = c.app->get_subcommand("train");
        if (!cifar && (me->count("--cifar-width") || me->count("--cifar-blocks")))
            throw UsageError("--cifar-width and --cifar-blocks apply to --arch resnet_cifar only");
        if (cifar && !a.cfg.pretrained_backbone.empty())
            throw UsageError("--pretrained-backbone needs --arch resnet18 or resnet50");
        a.cfg.seed = c.seed;
        a.cfg.validate();

        data::DatasetManifest m = data::load_manifest(manifest_path(a.features));
        if (a.permute) m = data::permute_labels(m, data::Split::train, c.seed);
        const auto t = m.tally();
        progress("training on " + std::to_string(t.real_train + t.synthetic_train) + " features, validating on " +
                 std::to_string(t.real_val + t.synthetic_val));
        const auto ck = classifier::train_classifier(m, a.cfg, [](const classifier::EpochLog& e) {
            std::string line = "epoch " + std::to_string(e.epoch) + " loss " + fixed(e.train_loss);
            if (e.val_accuracy) line += " val_acc " + fixed(*e.val_accuracy);
            progress(line);
        });
        ck.save(a.out);
        json history = json::array();
        for (const auto& e : ck.history)
            history.push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"val_accuracy", e.val_accuracy ? json(*e.val_accuracy) : json(nullptr)}});
        c.write_provenance(a.out, {{"classifier", classifier::to_json(ck.config())},
                                   {"features_digest", ck.train_manifest_digest},
                                   {"permuted_labels", a.permute},
                                   {"history", history}});
        std::cout << json{{"checkpoint", a.out.string()}, {"history", history}}.dump() << std::endl;
    });
}

void register_eval(CLI::App& app, Context& ctx, Action* slot) {
    static EvalArgs a;
    CLI::App* e = app.add_subcommand("eval", "Score a classifier on one feature set");
    e->add_option("--checkpoint", a.checkpoint)->required();
    e->add_option("--features", a.features, "Feature manifest, or the extraction output directory")->required();
    e->add_option("--out", a.out, "Output directory")->required();
    e->add_option("--split", a.split, "train, val or all")->capture_default_str();
    e->add_option("--tag", a.tag, "Row and column label in the reports")->capture_default_str();
    e->add_option("--batch-size", a.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
    on_run(e, ctx, slot, [](Context& c) {
        const auto ck = classifier::ClassifierCheckpoint::load(a.checkpoint);
        const data::DatasetManifest m = data::load_manifest(manifest_path(a.features));
        const auto preds = classifier::predict_manifest(ck, m, parse_split_or_all(a.split), a.batch_size);
        if (preds.empty()) throw DataError("no features in split '" + a.split + "'");

        std::vector<data::Label> truth, predicted;
        std::vector<double> scores;
        std::string lines;
        for (const auto& p : preds) {
            truth.push_back(p.truth);
            predicted.push_back(p.result.label);
            scores.push_back(p.result.prob_synthetic);
            lines += classifier::to_json(p).dump() + "\n";
        }
        fs::create_directories(a.out);
        write_file_atomic(a.out / "predictions.jsonl", lines);

        eval::EvalMatrix mat;
        mat.train_tags = mat.test_tags = {a.tag};
        mat.acc = {{eval::accuracy(predicted, truth)}};
        mat.counts = {{preds.size()}};
        const auto n_syn = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), data::Label::synthetic));
        const bool both = n_syn > 0 && n_syn < truth.size();
        if (both) mat.auc = {{eval::auc(scores, truth)}};
        mat.meta = {{"split", a.split}, {"checkpoint", a.checkpoint.string()}, {"features_digest", m.digest()}};
        eval::emit_reports(mat, a.out / "matrix");

        json metrics = {{"accuracy", mat.acc[0][0]},
                        {"auc", both ? json(mat.auc[0][0]) : json(nullptr)},
                        {"n", preds.size()},
                        {"split", a.split}};
        write_json_file(a.out / "metrics.json", metrics);
        c.write_provenance(a.out, {{"metrics", metrics}, {"classifier", classifier::to_json(ck.config())}});
        std::cout << metrics.dump() << std::endl;
    });
}

void register_crossval(CLI::App& app, Context& ctx, Action* slot) {
    static CrossvalArgs a;
    CLI::App* x = app.add_subcommand("crossval", "Cross-generator accuracy matrix and summary table");
    x->add_option("--checkpoint", a.checkpoints, "TAG=CHECKPOINT, one per training generator")->required();
    x->add_option("--features", a.features, "TAG=FEATURES, one per test generator")->required();
    x->add_option("--out", a.out, "Report stem; writes .csv, .json and .png")->required();
    x->add_option("--split", a.split, "Test split")->capture_default_str();
    x->add_option("--diff-based", a.diff_based, "Test tags averaged into the diffusion-based column");
    x->add_option("--gan", a.gan, "Test tags averaged into the GAN column");
    x->footer("Invalid combinations: --diff-based without --gan (or the reverse); a grouping tag that is not a "
              "--features tag.");
    on_run(x, ctx, slot, [](Context& c) {
        if (a.diff_based.empty() != a.gan.empty())
            throw UsageError("--diff-based and --gan must be given together");
        std::vector<classifier::ClassifierCheckpoint> owned;
        std::vector<std::string> train_tags;
        owned.reserve(a.checkpoints.size());
        for (const std::string& s : a.checkpoints) {
            auto [tag, path] = split_tagged(s);
            owned.push_back(classifier::ClassifierCheckpoint::load(path));
            train_tags.push_back(tag);
        }
        std::vector<eval::TaggedCheckpoint> ckpts;
        for (std::size_t i = 0; i < owned.size(); ++i) ckpts.emplace_back(train_tags[i], &owned[i]);
        std::vector<eval::TaggedFeatures> tests;
        for (const std::string& s : a.features) {
            auto [tag, path] = split_tagged(s);
            tests.emplace_back(tag, data::load_manifest(manifest_path(path)));
        }
        eval::EvalMatrix m = eval::cross_validate(ckpts, tests, data::parse_split(a.split));
        json extra = json::object();
        if (!a.diff_based.empty()) {
            const eval::SummaryRow r = eval::summarize_table(m, {a.diff_based, a.gan});
            extra["summary"] = {{"diff_based", r.diff_based}, {"gan", r.gan}, {"avg", r.avg}};
            m.meta["summary"] = extra["summary"];
            progress(eval::format_summary(r));
        }
        eval::emit_reports(m, a.out);
        c.write_provenance(a.out, extra);
        std::cout << eval::to_json(m).dump() << std::endl;
    });
}

void register_gradcam(CLI::App& app, Context& ctx, Action* slot) {
    static GradcamArgs a;
    CLI::App* g = app.add_subcommand("gradcam", "Grad-CAM overlays for feature files");
    g->add_option("--checkpoint", a.checkpoint)->required();
    g->add_option("--out", a.out, "Output directory for overlay PNGs")->required();
    auto* files = g->add_option("--feature", a.feature_files, "Feature file(s)");
    auto* set = g->add_option("--features", a.features, "Feature manifest or extraction directory");
    files->excludes(set);
    g->add_option("--limit", a.limit, "Entries taken from --features")->capture_default_str();
    g->add_option("--image", a.image, "Underlying image (single --feature only; default: recorded source)");
    g->add_option("--layer", a.layer, "Residual stage (default: last)");
    g->add_option("--target-class", a.target_class, "0 real, 1 synthetic (default: predicted)")
        ->check(CLI::Range(0, 1));
    g->add_option("--alpha", a.alpha, "Heatmap opacity")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    g->footer("Invalid combinations: --feature with --features; neither of them; --image with more than one "
              "feature.");
    on_run(g, ctx, slot, [](Context& c) {
        std::vector<fs::path> inputs = a.feature_files;
        if (!a.features.empty()) {
            const data::DatasetManifest m = data::load_manifest(manifest_path(a.features));
            for (const auto& e : m.entries()) {
                if (inputs.size() >= a.limit) break;
                inputs.push_back(m.resolve(e));
            }
        }
        if (inputs.empty()) throw UsageError("one of --feature or --features is required");
        if (!a.image.empty() && inputs.size() != 1) throw UsageError("--image needs exactly one --feature");

        const auto ck = classifier::ClassifierCheckpoint::load(a.checkpoint);
        const explain::GradCamOptions opt{a.layer, a.target_class};
        fs::create_directories(a.out);
        json written = json::array();
        std::set<std::string> names;
        for (const fs::path& p : inputs) {
            const features::FeatureMap f = features::load_feature(p);
            const explain::HeatMap hm = explain::gradcam(ck, f, opt);
            const fs::path image = a.image.empty() ? fs::path(f.meta.source_path) : a.image;
            if (image.empty()) throw DataError("feature " + p.string() + " records no source image; pass --image");
            std::string name = fs::path(p.stem()).stem().string();
            if (!names.insert(name).second) name += "_" + std::to_string(written.size());
            const fs::path png = a.out / (name + ".cam.png");
            explain::write_overlay(hm, image, a.alpha, png);
            written.push_back({{"feature", p.string()},
                               {"overlay", png.string()},
                               {"prob_synthetic", hm.prob_synthetic},
                               {"target_class", hm.target_class},
                               {"degenerate", hm.degenerate}});
        }
        c.write_provenance(a.out, {{"overlays", written}});
        std::cout << json{{"overlays", written}}.dump() << std::endl;
    });
}

}  // namespace tsg::cli
