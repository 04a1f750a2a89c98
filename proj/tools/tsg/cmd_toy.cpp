#include <fstream>
#include <iomanip>
#include <sstream>

#include "app.hpp"
#include "tsg/common/error.hpp"
#include "tsg/common/rng.hpp"
#include "tsg/data/toy.hpp"
#include "tsg/features/preprocess.hpp"
#include "tsg/predictor/handle.hpp"

namespace fs = std::filesystem;

namespace tsg::cli {

namespace {

struct ToyRealArgs {
    fs::path photos = "data/photos";
    fs::path out;
    data::ToyPatchConfig patch;
};

struct ToyTrainArgs {
    fs::path manifest, out, log;
    predictor::ToyUNetConfig net;
    predictor::ToyTrainConfig train;
    double beta_start = 1e-4, beta_end = 0.02;
    int log_every = 100;
};

struct ToyGenerateArgs {
    fs::path model, out;
    int n = 1000;
    int k = 20;
    int batch_size = 50;
};

struct ToyManifestArgs {
    fs::path real, fake, out;
    data::ToySplitConfig split;
};

}  // namespace

void register_toy(CLI::App& app, Context& ctx, Action* slot) {
    CLI::App* toy = app.add_subcommand("toy", "Desk-scale diffusion model and closed-loop dataset");
    toy->require_subcommand(1);

    static ToyRealArgs real;
    CLI::App* r = toy->add_subcommand("real", "Cut real training patches from photos");
    r->add_option("--photos", real.photos, "Directory of source photos")->capture_default_str();
    r->add_option("--out", real.out, "Output directory for PNG patches")->required();
    r->add_option("--count", real.patch.count)->capture_default_str()->check(CLI::PositiveNumber);
    r->add_option("--size", real.patch.size)->capture_default_str()->check(CLI::PositiveNumber);
    r->add_option("--min-scale", real.patch.min_scale)->capture_default_str();
    r->add_option("--max-scale", real.patch.max_scale)->capture_default_str();
    on_run(r, ctx, slot, [](Context& c) {
        real.patch.seed = c.seed;
        const auto written = data::build_toy_real_patches(real.photos, real.out, real.patch);
        c.write_provenance(real.out, {{"written", written.size()}});
        std::cout << json{{"written", written.size()}, {"out", real.out.string()}}.dump() << std::endl;
    });

    static ToyTrainArgs tr;
    CLI::App* t = toy->add_subcommand("train", "Train the toy eps-prediction U-Net on a manifest's real train split");
    t->add_option("--manifest", tr.manifest)->required();
    t->add_option("--out", tr.out, "Output checkpoint")->required();
    t->add_option("--log", tr.log, "CSV of per-step losses");
    t->add_option("--steps", tr.train.steps)->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--batch-size", tr.train.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
    t->add_option("--lr", tr.train.learning_rate)->capture_default_str();
    t->add_option("--base-channels", tr.net.base_channels)->capture_default_str();
    t->add_option("--depth", tr.net.depth)->capture_default_str();
    t->add_option("--time-embedding-dim", tr.net.time_embedding_dim)->capture_default_str();
    t->add_option("--resolution", tr.net.resolution)->capture_default_str();
    t->add_option("--T", tr.net.T, "Diffusion steps")->capture_default_str();
    t->add_option("--num-res-blocks", tr.net.num_res_blocks)->capture_default_str();
    t->add_option("--norm-groups", tr.net.norm_groups)->capture_default_str();
    t->add_option("--bottleneck-attention", tr.net.bottleneck_attention)->capture_default_str();
    t->add_option("--beta-start", tr.beta_start)->capture_default_str();
    t->add_option("--beta-end", tr.beta_end)->capture_default_str();
    t->add_option("--log-every", tr.log_every, "Progress interval in steps")->capture_default_str();
    on_run(t, ctx, slot, [](Context& c) {
        const data::DatasetManifest m = data::load_manifest(tr.manifest);
        const auto sched = diffusion::make_linear_schedule(tr.net.T, tr.beta_start, tr.beta_end);
        tr.train.seed = c.seed;
        double running = 0;
        int window = 0;
        tr.train.on_step = [&](int step, double loss) {
            running += loss;
            ++window;
            if (tr.log_every > 0 && (step % tr.log_every == 0 || step == tr.train.steps)) {
                std::ostringstream line;
                line << "step " << step << "/" << tr.train.steps << " loss " << std::setprecision(5)
                     << running / window;
                progress(line.str());
                running = 0;
                window = 0;
            }
        };
        const auto result = predictor::train_toy_ddpm(m, tr.net, sched, tr.train);
        result.handle->save(tr.out);
        if (!tr.log.empty()) {
            std::ostringstream csv;
            csv << "step,loss\n" << std::setprecision(9);
            for (std::size_t i = 0; i < result.losses.size(); ++i) csv << i + 1 << "," << result.losses[i] << "\n";
            write_file_atomic(tr.log, csv.str());
        }
        c.write_provenance(tr.out, {{"predictor", predictor::to_json(result.handle->meta())},
                                    {"manifest_digest", m.digest()},
                                    {"final_loss", result.losses.back()}});
        std::cout << json{{"checkpoint", tr.out.string()}, {"tag", result.handle->tag()},
                          {"final_loss", result.losses.back()}}
                         .dump()
                  << std::endl;
    });

    static ToyGenerateArgs gen;
    CLI::App* g = toy->add_subcommand("generate", "Sample synthetic images with deterministic DDIM");
    g->add_option("--model", gen.model)->required();
    g->add_option("--out", gen.out, "Output directory for PNG samples")->required();
    g->add_option("--n", gen.n)->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--ddim-steps", gen.k)->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--batch-size", gen.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
    on_run(g, ctx, slot, [](Context& c) {
        const auto h = predictor::load_pretrained(gen.model);
        const auto sched = h->schedule();
        fs::create_directories(gen.out);
        int written = 0;
        for (int b0 = 0; b0 < gen.n; b0 += gen.batch_size) {
            const int m = std::min(gen.batch_size, gen.n - b0);
            // Each chunk draws from its own seed so partial runs stay consistent.
            const auto imgs =
                predictor::generate_samples(*h, m, gen.k, derive_seed(c.seed, "toy-generate/" + std::to_string(b0)),
                                            sched, gen.batch_size);
            for (const auto& img : imgs) {
                char name[32];
                std::snprintf(name, sizeof name, "fake_%05d.png", written++);
                features::save_png(img, gen.out / name);
            }
            progress("generated " + std::to_string(written) + "/" + std::to_string(gen.n));
        }
        c.write_provenance(gen.out, {{"predictor", predictor::to_json(h->meta())}, {"written", written}});
        std::cout << json{{"written", written}, {"out", gen.out.string()}}.dump() << std::endl;
    });

    static ToyManifestArgs man;
    CLI::App* mf = toy->add_subcommand("manifest", "Stratified train/val manifest over toy real and fake images");
    mf->add_option("--real", man.real)->required();
    mf->add_option("--fake", man.fake, "Directory of generated images (omit for a real-only manifest)");
    mf->add_option("--out", man.out)->required();
    mf->add_option("--train-fraction", man.split.train_fraction)->capture_default_str();
    mf->add_option("--balance", man.split.balance)->capture_default_str();
    on_run(mf, ctx, slot, [](Context& c) {
        man.split.seed = c.seed;
        const data::DatasetManifest m = data::build_toy_manifest(man.real, man.fake, man.split);
        data::save_manifest(m, man.out);
        c.write_provenance(man.out, {{"manifest_digest", m.digest()}});
        std::cout << json{{"manifest", man.out.string()}, {"entries", m.entries().size()}}.dump() << std::endl;
    });
}

}  // namespace tsg::cli
