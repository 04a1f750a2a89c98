#include <iomanip>
#include <map>
#include <sstream>

#include "app.hpp"
#include "tsg/common/error.hpp"
#include "tsg/eval/evaluation.hpp"
#include "tsg/features/extract.hpp"
#include "tsg/features/preprocess.hpp"
#include "tsg/predictor/handle.hpp"

namespace fs = std::filesystem;

namespace tsg::cli {

namespace {

struct ExtractArgs {
    fs::path manifest, model, out;
    std::string method = "tsg";
    std::optional<int> t;
    std::optional<int> k;
    int batch_size = 16;
    int size = 0;
    std::size_t max_failures = 0;
};

struct BenchArgs {
    fs::path model, images, out;
    std::string method = "both";
    int n = 100;
    int k = 20;
    int batch_size = 16;
};

std::vector<fs::path> image_paths(const fs::path& src) {
    if (fs::is_directory(src)) return data::list_images(src);
    const data::DatasetManifest m = data::load_manifest(src);
    std::vector<fs::path> out;
    for (const auto& e : m.entries()) out.push_back(m.resolve(e));
    return out;
}

}  // namespace

void register_extract(CLI::App& app, Context& ctx, Action* slot) {
    static ExtractArgs a;
    CLI::App* x = app.add_subcommand("extract", "Compute TSG or DIRE feature files for every manifest entry");
    x->add_option("--manifest", a.manifest, "Image manifest (JSONL)")->required();
    x->add_option("--model", a.model, "Noise predictor checkpoint")->required();
    x->add_option("--out", a.out, "Output directory; features.jsonl is written here")->required();
    x->add_option("--method", a.method, "tsg or dire")->capture_default_str();
    x->add_option("--t", a.t, "TSG timestep (default 0)");
    x->add_option("--ddim-steps", a.k, "DIRE DDIM steps (default 20)");
    x->add_option("--batch-size", a.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
    x->add_option("--size", a.size, "Input side length; 0 uses the model resolution")->capture_default_str();
    x->add_option("--max-failures", a.max_failures, "Unreadable images tolerated before exiting with an error")
        ->capture_default_str();
    x->footer("Invalid combinations: --t with --method dire; --ddim-steps with --method tsg.");
    on_run(x, ctx, slot, [](Context& c) {
        features::BatchExtractConfig cfg;
        cfg.method = features::parse_method(a.method);
        if (cfg.method == features::Method::dire && a.t) throw UsageError("--t applies to --method tsg only");
        if (cfg.method == features::Method::tsg && a.k) throw UsageError("--ddim-steps applies to --method dire only");
        cfg.tsg.t = a.t.value_or(0);
        cfg.tsg.height = cfg.tsg.width = a.size;
        cfg.k = a.k.value_or(20);
        cfg.workers = c.workers;
        cfg.batch_size = a.batch_size;

        const data::DatasetManifest m = data::load_manifest(a.manifest);
        const auto h = predictor::load_pretrained(a.model);
        h->set_max_batch(a.batch_size);
        progress("extracting " + std::to_string(m.size()) + " images with " + features::to_string(cfg.method));
        const features::ExtractionReport r = features::batch_extract(m, *h, h->schedule(), cfg, a.out);
        json report = features::to_json(r);
        c.write_provenance(a.out, {{"predictor", predictor::to_json(h->meta())},
                                   {"manifest_digest", m.digest()},
                                   {"report", report}});
        std::cout << report.dump() << std::endl;
        if (r.failed > a.max_failures)
            throw DataError(std::to_string(r.failed) + " images failed extraction; first: " + r.failures.front().path +
                            ": " + r.failures.front().error);
    });
}

void register_bench(CLI::App& app, Context& ctx, Action* slot) {
    static BenchArgs a;
    CLI::App* b = app.add_subcommand("bench", "Time TSG and DIRE extraction and verify predictor call counts");
    b->add_option("--model", a.model, "Noise predictor checkpoint")->required();
    b->add_option("--images", a.images, "Image directory or manifest")->required();
    b->add_option("--out", a.out, "Report stem; writes <stem>.<method>.json")->required();
    b->add_option("--method", a.method, "tsg, dire or both")->capture_default_str();
    b->add_option("--n", a.n, "Images timed")->capture_default_str()->check(CLI::PositiveNumber);
    b->add_option("--ddim-steps", a.k)->capture_default_str()->check(CLI::PositiveNumber);
    b->add_option("--batch-size", a.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
    on_run(b, ctx, slot, [](Context& c) {
        std::vector<features::Method> methods;
        if (a.method == "both")
            methods = {features::Method::tsg, features::Method::dire};
        else
            methods = {features::parse_method(a.method)};

        const auto h = predictor::load_pretrained(a.model);
        h->set_max_batch(a.batch_size);
        const auto paths = image_paths(a.images);
        if (paths.size() < static_cast<std::size_t>(a.n))
            throw DataError("bench needs " + std::to_string(a.n) + " images, found " + std::to_string(paths.size()));
        std::vector<diffusion::ImageTensor> images;
        const features::PreprocessConfig pre{h->height(), h->width()};
        for (int i = 0; i < a.n; ++i) images.push_back(features::preprocess(paths[i], pre));

        json out = json::object();
        std::map<std::string, double> seconds;
        for (features::Method m : methods) {
            const eval::TimingReport r = eval::timing_benchmark(m, *h, h->schedule(), images, a.batch_size, a.k, a.n);
            const std::string name = features::to_string(m);
            fs::path stem = a.out;
            stem += "." + std::string(m == features::Method::tsg ? "tsg" : "dire");
            eval::emit_reports(r, stem);
            out[name] = eval::to_json(r);
            seconds[name] = r.wall_seconds;
            std::ostringstream line;
            line << name << ": " << std::fixed << std::setprecision(3) << r.wall_seconds << " s, "
                 << r.predictor_calls << " predictor calls";
            progress(line.str());
        }
        if (seconds.size() == 2 && seconds["TSG"] > 0) out["dire_over_tsg"] = seconds["DIRE"] / seconds["TSG"];
        c.write_provenance(a.out, {{"predictor", predictor::to_json(h->meta())}, {"results", out}});
        std::cout << out.dump() << std::endl;
    });
}

}  // namespace tsg::cli
