#include "app.hpp"
#include "tsg/common/error.hpp"
#include "tsg/data/genimage.hpp"

namespace fs = std::filesystem;

namespace tsg::cli {

namespace {

struct UnbiasedArgs {
    fs::path root, layout, out, full;
    data::UnbiasedFilterConfig filter;
    bool no_balance = false;
};

json tally_json(const data::Tally& t) {
    return {{"real_train", t.real_train},
            {"real_val", t.real_val},
            {"synthetic_train", t.synthetic_train},
            {"synthetic_val", t.synthetic_val}};
}

}  // namespace

void register_build_unbiased(CLI::App& app, Context& ctx, Action* slot) {
    static UnbiasedArgs a;
    CLI::App* b = app.add_subcommand("build-unbiased", "Scan a benchmark root and keep only high-quality JPEGs");
    b->add_option("--root", a.root, "Benchmark root directory")->required()->check(CLI::ExistingDirectory);
    b->add_option("--out", a.out, "Filtered manifest (JSONL)")->required();
    b->add_option("--layout", a.layout, "JSON layout description (default generator/split/class)")
        ->check(CLI::ExistingFile);
    b->add_option("--full-manifest", a.full, "Also write the unfiltered scan here");
    b->add_option("--min-quality", a.filter.min_quality)->capture_default_str()->check(CLI::Range(1, 100));
    b->add_flag("--jpeg-only", a.filter.jpeg_only, "Drop lossless files instead of keeping them");
    b->add_flag("--no-balance", a.no_balance, "Keep unequal class counts within a split");
    on_run(b, ctx, slot, [](Context& c) {
        const data::LayoutConfig layout =
            a.layout.empty() ? data::LayoutConfig{} : data::layout_from_json(read_json_file(a.layout));
        a.filter.require_balance = !a.no_balance;
        a.filter.seed = c.seed;
        const data::DatasetManifest scanned = data::scan_genimage_root(a.root, layout, c.workers);
        progress("scanned " + std::to_string(scanned.size()) + " images");
        if (!a.full.empty()) data::save_manifest(scanned, a.full);
        const data::DatasetManifest kept = data::filter_unbiased(scanned, a.filter);
        data::save_manifest(kept, a.out);
        const json result = {{"manifest", a.out.string()},
                             {"scanned", tally_json(scanned.tally())},
                             {"kept", tally_json(kept.tally())}};
        c.write_provenance(a.out, {{"manifest_digest", kept.digest()}, {"result", result}});
        std::cout << result.dump() << std::endl;
    });
}

}  // namespace tsg::cli
