#include "tsg/data/genimage.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <random>
#include <thread>

#include "tsg/common/error.hpp"
#include "tsg/common/rng.hpp"

namespace fs = std::filesystem;

namespace tsg::data {

LayoutConfig layout_from_json(const json& j) {
    LayoutConfig c;
    try {
        if (j.contains("levels")) c.levels = j.at("levels").get<std::vector<std::string>>();
        if (j.contains("class_dirs")) {
            c.class_dirs.clear();
            for (const auto& [k, v] : j.at("class_dirs").items()) c.class_dirs[k] = parse_label(v.get<std::string>());
        }
        if (j.contains("split_dirs")) {
            c.split_dirs.clear();
            for (const auto& [k, v] : j.at("split_dirs").items()) c.split_dirs[k] = parse_split(v.get<std::string>());
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed layout config: ") + e.what());
    }
    for (const char* role : {"generator", "split", "class"})
        if (std::count(c.levels.begin(), c.levels.end(), role) != 1)
            throw UsageError(std::string("layout levels must name '") + role + "' exactly once");
    return c;
}

namespace {

void walk(const fs::path& dir, const LayoutConfig& layout, std::size_t depth, ManifestEntry proto,
          std::vector<ManifestEntry>& out) {
    std::vector<fs::directory_entry> children{fs::directory_iterator(dir), fs::directory_iterator()};
    std::sort(children.begin(), children.end(), [](const auto& a, const auto& b) { return a.path() < b.path(); });
    for (const auto& de : children) {
        const std::string name = de.path().filename().string();
        if (!name.empty() && name[0] == '.') continue;
        if (depth == layout.levels.size()) {
            if (de.is_directory())
                throw DataError("unrecognized layout: unexpected directory " + de.path().string());
            if (de.is_regular_file() && is_image_file(de.path())) {
                ManifestEntry e = proto;
                e.path = de.path().string();
                out.push_back(std::move(e));
            }
            continue;
        }
        if (!de.is_directory()) {
            if (is_image_file(de.path()))
                throw DataError("unrecognized layout: image file above the class level: " + de.path().string());
            continue;
        }
        ManifestEntry next = proto;
        const std::string& role = layout.levels[depth];
        if (role == "generator") {
            next.generator = name;
        } else if (role == "split") {
            auto it = layout.split_dirs.find(name);
            if (it == layout.split_dirs.end())
                throw DataError("unrecognized layout: unknown split directory " + de.path().string());
            next.split = it->second;
        } else if (role == "class") {
            auto it = layout.class_dirs.find(name);
            if (it == layout.class_dirs.end())
                throw DataError("unrecognized layout: unknown class directory " + de.path().string());
            next.label = it->second;
        }
        walk(de.path(), layout, depth + 1, next, out);
    }
}

}  // namespace

DatasetManifest scan_genimage_root(const fs::path& root, const LayoutConfig& layout, int workers) {
    if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());
    std::vector<ManifestEntry> entries;
    walk(root, layout, 0, ManifestEntry{}, entries);
    if (entries.empty()) throw DataError("no images found under " + root.string());

    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(entries.size());
    auto work = [&] {
        for (std::size_t i = next++; i < entries.size(); i = next++) {
            if (!is_jpeg_file(entries[i].path)) continue;
            try {
                entries[i].jpeg_quality = estimate_jpeg_quality(entries[i].path);
            } catch (const DataError& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < std::max(workers, 1); ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (const std::string& e : errors)
        if (!e.empty()) throw DataError(e);

    return DatasetManifest(std::move(entries), {{"scan", "genimage"}, {"levels", layout.levels}}, root.string());
}

namespace {

constexpr int kZigzag[64] = {0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
                             12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
                             35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
                             58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

constexpr int kStdLuminance[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                   14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                   18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                   49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

}  // namespace

std::vector<int> ijg_luminance_table(int quality) {
    if (quality < 1 || quality > 100) throw UsageError("JPEG quality must be in [1, 100]");
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::vector<int> t(64);
    for (int i = 0; i < 64; ++i) t[i] = std::clamp((kStdLuminance[i] * scale + 50) / 100, 1, 255);
    return t;
}

int estimate_jpeg_quality_bytes(const std::vector<std::uint8_t>& b, const std::string& label) {
    if (b.size() < 4 || b[0] != 0xFF || b[1] != 0xD8) throw DataError("not a JPEG file: " + label);
    std::vector<int> table;
    std::size_t pos = 2;
    while (pos + 4 <= b.size() && table.empty()) {
        if (b[pos] != 0xFF) throw DataError("corrupt JPEG marker stream in " + label);
        const std::uint8_t marker = b[pos + 1];
        if (marker == 0xFF) {
            ++pos;
            continue;
        }
        if (marker == 0xD9 || marker == 0xDA) break;
        if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) {
            pos += 2;
            continue;
        }
        const std::size_t len = (static_cast<std::size_t>(b[pos + 2]) << 8) | b[pos + 3];
        if (len < 2 || pos + 2 + len > b.size()) throw DataError("truncated JPEG segment in " + label);
        if (marker == 0xDB) {
            std::size_t q = pos + 4;
            const std::size_t end = pos + 2 + len;
            while (q < end) {
                const int precision = b[q] >> 4;
                const int id = b[q] & 0x0F;
                ++q;
                const std::size_t bytes = precision ? 128 : 64;
                if (q + bytes > end) throw DataError("truncated quantization table in " + label);
                if (id == 0) {
                    table.assign(64, 0);
                    for (int i = 0; i < 64; ++i)
                        table[kZigzag[i]] = precision ? (b[q + 2 * i] << 8) | b[q + 2 * i + 1] : b[q + i];
                }
                q += bytes;
            }
        }
        pos += 2 + len;
    }
    if (table.empty()) throw DataError("JPEG has no luminance quantization table: " + label);
    int best_q = 100;
    long best = -1;
    for (int q = 100; q >= 1; --q) {
        const std::vector<int> ref = ijg_luminance_table(q);
        long d = 0;
        for (int i = 0; i < 64; ++i) d += std::abs(ref[i] - table[i]);
        if (best < 0 || d < best) {
            best = d;
            best_q = q;
        }
    }
    return best_q;
}

int estimate_jpeg_quality(const fs::path& file) { return estimate_jpeg_quality_bytes(read_binary_file(file), file.string()); }

void UnbiasedFilterConfig::validate() const {
    if (min_quality < 1 || min_quality > 100) throw UsageError("min_quality must be in [1, 100]");
}

DatasetManifest filter_unbiased(const DatasetManifest& m, const UnbiasedFilterConfig& cfg) {
    cfg.validate();
    std::vector<ManifestEntry> kept;
    for (const auto& e : m.entries()) {
        if (e.jpeg_quality ? *e.jpeg_quality >= cfg.min_quality : !cfg.jpeg_only) kept.push_back(e);
    }
    auto count = [&](Label l) {
        return std::count_if(kept.begin(), kept.end(), [l](const auto& e) { return e.label == l; });
    };
    if (count(Label::real) == 0 || count(Label::synthetic) == 0)
        throw DataError("a class is empty after unbiased filtering");

    if (cfg.require_balance) {
        std::vector<ManifestEntry> balanced;
        for (Split s : {Split::train, Split::val}) {
            std::vector<ManifestEntry> real, synth;
            for (const auto& e : kept)
                if (e.split == s) (e.label == Label::real ? real : synth).push_back(e);
            const std::size_t n = std::min(real.size(), synth.size());
            for (auto* cls : {&real, &synth}) {
                if (cls->size() > n) {
                    // Entries arrive sorted by path; the shuffle is keyed by the seed only.
                    Rng rng = make_rng(cfg.seed, std::string("unbiased/") + to_string(s));
                    std::shuffle(cls->begin(), cls->end(), rng);
                    cls->resize(n);
                }
                balanced.insert(balanced.end(), cls->begin(), cls->end());
            }
        }
        kept = std::move(balanced);
    }
    json params = m.params();
    params["unbiased_filter"] = {{"min_quality", cfg.min_quality},
                                 {"require_balance", cfg.require_balance},
                                 {"jpeg_only", cfg.jpeg_only},
                                 {"seed", cfg.seed},
                                 {"input_digest", m.digest()}};
    DatasetManifest out(std::move(kept), params, m.root());
    out.set_base_dir(m.base_dir());
    out.set_sources(m.sources());
    return out;
}

}  // namespace tsg::data
