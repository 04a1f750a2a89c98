#include "tsg/data/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>

#include "tsg/common/error.hpp"
#include "tsg/common/rng.hpp"

namespace fs = std::filesystem;

namespace tsg::data {

std::vector<fs::path> build_toy_real_patches(const fs::path& photo_dir, const fs::path& out_dir,
                                             const ToyPatchConfig& cfg) {
    if (cfg.count < 1 || cfg.size < 1) throw UsageError("patch count and size must be positive");
    if (!(cfg.min_scale > 0.0 && cfg.min_scale <= cfg.max_scale && cfg.max_scale <= 1.0))
        throw UsageError("crop scales must satisfy 0 < min_scale <= max_scale <= 1");
    std::vector<cv::Mat> photos;
    for (const fs::path& p : list_images(photo_dir)) {
        cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
        if (m.empty()) throw DataError("cannot decode photo " + p.string());
        if (std::min(m.rows, m.cols) >= cfg.size) photos.push_back(m);
    }
    if (photos.empty()) throw DataError("no usable photos in " + photo_dir.string());
    fs::create_directories(out_dir);

    Rng rng = make_rng(cfg.seed, "toy-patches");
    std::uniform_int_distribution<std::size_t> pick(0, photos.size() - 1);
    std::uniform_real_distribution<double> scale(cfg.min_scale, cfg.max_scale);
    std::vector<fs::path> out;
    out.reserve(cfg.count);
    for (int i = 0; i < cfg.count; ++i) {
        const cv::Mat& photo = photos[pick(rng)];
        const int shorter = std::min(photo.rows, photo.cols);
        const int side = std::clamp(static_cast<int>(std::lround(scale(rng) * shorter)), cfg.size, shorter);
        std::uniform_int_distribution<int> ys(0, photo.rows - side), xs(0, photo.cols - side);
        const int y = ys(rng), x = xs(rng);
        cv::Mat patch;
        cv::resize(photo(cv::Rect(x, y, side, side)), patch, cv::Size(cfg.size, cfg.size), 0, 0, cv::INTER_AREA);
        char name[32];
        std::snprintf(name, sizeof name, "real_%05d.png", i);
        const fs::path path = out_dir / name;
        if (!cv::imwrite(path.string(), patch)) throw DataError("cannot write " + path.string());
        out.push_back(path);
    }
    return out;
}

namespace {

struct ClassSplit {
    std::vector<fs::path> train, val;
};

ClassSplit split_class(std::vector<fs::path> files, const ToySplitConfig& cfg, Label label) {
    Rng rng = make_rng(cfg.seed, std::string("toy-split/") + to_string(label));
    std::shuffle(files.begin(), files.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(files.size())));
    ClassSplit s;
    s.train.assign(files.begin(), files.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(files.begin() + static_cast<std::ptrdiff_t>(n_train), files.end());
    return s;
}

}  // namespace

DatasetManifest build_toy_manifest(const fs::path& real_dir, const fs::path& fake_dir, const ToySplitConfig& cfg) {
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0)) throw UsageError("train fraction must be in (0, 1]");
    const std::vector<fs::path> real = list_images(real_dir);
    if (real.empty()) throw DataError("no real images in " + real_dir.string());
    std::vector<fs::path> fake;
    if (!fake_dir.empty()) {
        fake = list_images(fake_dir);
        if (fake.empty()) throw DataError("no generated images in " + fake_dir.string());
    }
    ClassSplit r = split_class(real, cfg, Label::real);
    ClassSplit f = split_class(fake, cfg, Label::synthetic);
    if (r.val.empty() || (!fake.empty() && f.val.empty())) throw UsageError("train fraction leaves the val split empty");
    if (r.train.empty() || (!fake.empty() && f.train.empty()))
        throw UsageError("train fraction leaves the train split empty");
    if (cfg.balance && !fake.empty()) {
        for (auto [a, b] : {std::pair{&r.train, &f.train}, std::pair{&r.val, &f.val}}) {
            const std::size_t n = std::min(a->size(), b->size());
            a->resize(n);
            b->resize(n);
        }
    }
    std::vector<ManifestEntry> entries;
    auto add = [&](const std::vector<fs::path>& files, Label l, Split s) {
        for (const fs::path& p : files) entries.push_back({p.string(), l, "toy", s, std::nullopt});
    };
    add(r.train, Label::real, Split::train);
    add(r.val, Label::real, Split::val);
    add(f.train, Label::synthetic, Split::train);
    add(f.val, Label::synthetic, Split::val);
    json params = {{"toy", true},
                   {"real_dir", real_dir.string()},
                   {"fake_dir", fake_dir.string()},
                   {"train_fraction", cfg.train_fraction},
                   {"seed", cfg.seed},
                   {"balance", cfg.balance}};
    return DatasetManifest(std::move(entries), params, real_dir.parent_path().string());
}

}  // namespace tsg::data
