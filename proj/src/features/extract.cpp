#include "tsg/features/extract.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <mutex>
#include <optional>
#include <thread>

#include "tsg/common/error.hpp"
#include "tsg/diffusion/ddim.hpp"

namespace fs = std::filesystem;
using tsg::diffusion::ImageTensor;
using tsg::diffusion::ValueRange;

static_assert(std::endian::native == std::endian::little, "feature payloads are little-endian float32");

namespace tsg::features {

namespace {

constexpr ValueRange kNonnegative{0.0f, std::numeric_limits<float>::infinity()};

ValueRange range_for(Method m) { return m == Method::dire ? kNonnegative : ValueRange::unbounded(); }

FeatureMeta make_meta(Method m, int t_or_k, const diffusion::NoisePredictor& p, const fs::path& source) {
    return {m, t_or_k, p.tag(), source.string(), utc_timestamp()};
}

}  // namespace

const char* to_string(Method m) noexcept { return m == Method::dire ? "DIRE" : "TSG"; }

Method parse_method(const std::string& s) {
    if (s == "tsg" || s == "TSG") return Method::tsg;
    if (s == "dire" || s == "DIRE") return Method::dire;
    throw UsageError("unknown feature method '" + s + "' (expected tsg or dire)");
}

void TSGConfig::validate(const diffusion::NoisePredictor& p) const {
    if (t < 0 || t >= p.timesteps())
        throw UsageError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(p.timesteps()) + ")");
    const PreprocessConfig pc = preprocess_for(p);
    if (pc.height != p.height() || pc.width != p.width())
        throw UsageError("target resolution " + std::to_string(pc.height) + "x" + std::to_string(pc.width) +
                         " differs from the predictor's " + std::to_string(p.height()) + "x" +
                         std::to_string(p.width()));
}

PreprocessConfig TSGConfig::preprocess_for(const diffusion::NoisePredictor& p) const {
    return {height > 0 ? height : p.height(), width > 0 ? width : p.width()};
}

std::vector<ImageTensor> tsg_features(std::span<const ImageTensor> images, const diffusion::NoisePredictor& p, int t) {
    if (images.empty()) return {};
    return diffusion::from_nchw(p.predict_noise(diffusion::to_nchw(images), t));
}

std::vector<ImageTensor> dire_features(std::span<const ImageTensor> images, const diffusion::NoisePredictor& p,
                                       const diffusion::NoiseSchedule& s, int k) {
    if (k < 1) throw UsageError("DIRE needs k >= 1 DDIM steps");
    if (images.empty()) return {};
    const nn::Tensor x = diffusion::to_nchw(images);
    const nn::Tensor rec = diffusion::ddim_denoise(diffusion::ddim_invert(x, k, p, s), k, p, s);
    nn::Tensor err(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) err[i] = std::fabs(x[i] - rec[i]);
    return diffusion::from_nchw(err, kNonnegative);
}

FeatureMap extract_tsg(const fs::path& image, const diffusion::NoisePredictor& p, const TSGConfig& cfg) {
    cfg.validate(p);
    const ImageTensor x = preprocess(image, cfg.preprocess_for(p));
    auto f = tsg_features(std::span(&x, 1), p, cfg.t);
    return {std::move(f.front()), make_meta(Method::tsg, cfg.t, p, image)};
}

FeatureMap extract_dire(const fs::path& image, const diffusion::NoisePredictor& p, const diffusion::NoiseSchedule& s,
                        int k, const TSGConfig& cfg) {
    cfg.validate(p);
    const ImageTensor x = preprocess(image, cfg.preprocess_for(p));
    auto f = dire_features(std::span(&x, 1), p, s, k);
    return {std::move(f.front()), make_meta(Method::dire, k, p, image)};
}

std::string encode_feature(const FeatureMap& f) {
    const ImageTensor& d = f.data;
    const json header = {{"schema", kFeatureSchema},
                         {"shape", {d.height(), d.width(), d.channels()}},
                         {"dtype", "f32le"},
                         {"method", to_string(f.meta.method)},
                         {"t_or_k", f.meta.t_or_k},
                         {"predictor_tag", f.meta.predictor_tag},
                         {"source_path", f.meta.source_path},
                         {"extracted_utc", f.meta.extracted_utc}};
    std::string out = header.dump() + "\n";
    const std::size_t head = out.size();
    out.resize(head + d.size() * sizeof(float));
    std::memcpy(out.data() + head, d.values().data(), d.size() * sizeof(float));
    return out;
}

FeatureMap decode_feature(std::string_view bytes, const std::string& label) {
    const std::size_t nl = bytes.find('\n');
    if (nl == std::string_view::npos) throw DataError("corrupt feature header in " + label);
    json h;
    try {
        h = json::parse(bytes.substr(0, nl));
    } catch (const json::parse_error&) {
        throw DataError("corrupt feature header in " + label);
    }
    FeatureMap f;
    std::vector<int> shape;
    try {
        if (h.at("schema") != kFeatureSchema) throw DataError("unsupported feature schema in " + label);
        if (h.at("dtype") != "f32le") throw DataError("unsupported feature dtype in " + label);
        shape = h.at("shape").get<std::vector<int>>();
        f.meta.method = parse_method(h.at("method").get<std::string>());
        f.meta.t_or_k = h.at("t_or_k");
        f.meta.predictor_tag = h.value("predictor_tag", "");
        f.meta.source_path = h.value("source_path", "");
        f.meta.extracted_utc = h.value("extracted_utc", "");
    } catch (const json::exception& e) {
        throw DataError("corrupt feature header in " + label + ": " + e.what());
    } catch (const UsageError& e) {
        throw DataError("corrupt feature header in " + label + ": " + e.what());
    }
    if (shape.size() != 3 || shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
        throw DataError("feature header in " + label + " has an invalid shape");
    const std::size_t n = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
    const std::size_t payload = bytes.size() - nl - 1;
    if (payload < n * sizeof(float))
        throw DataError("truncated feature payload in " + label + ": expected " + std::to_string(n * sizeof(float)) +
                        " bytes, found " + std::to_string(payload));
    if (payload != n * sizeof(float))
        throw DataError("feature payload length mismatch in " + label + ": expected " +
                        std::to_string(n * sizeof(float)) + " bytes, found " + std::to_string(payload));
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data() + nl + 1, n * sizeof(float));
    try {
        f.data = ImageTensor(shape[0], shape[1], shape[2], std::move(data), range_for(f.meta.method));
    } catch (const DataError& e) {
        throw DataError("feature values in " + label + " violate the " + to_string(f.meta.method) + " range: " + e.what());
    }
    return f;
}

void save_feature(const FeatureMap& f, const fs::path& path) { write_file_atomic(path, encode_feature(f)); }

FeatureMap load_feature(const fs::path& path) {
    const auto bytes = read_binary_file(path);
    return decode_feature(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path.string());
}

json to_json(const ExtractionReport& r) {
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"path", f.path}, {"error", f.error}});
    return {{"method", to_string(r.method)},     {"succeeded", r.succeeded},
            {"failed", r.failed},                {"wall_seconds", r.wall_seconds},
            {"predictor_calls", r.predictor_calls}, {"failures", failures},
            {"feature_manifest", r.feature_manifest.string()}};
}

fs::path feature_relpath(const data::DatasetManifest& m, const data::ManifestEntry& e) {
    fs::path p(e.path);
    if (!m.root().empty() && p.is_absolute()) {
        const fs::path rel = p.lexically_relative(m.root());
        if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    if (p.is_absolute()) p = p.relative_path();
    p += kFeatureExtension;
    return p.lexically_normal();
}

ExtractionReport batch_extract(const data::DatasetManifest& manifest, const diffusion::NoisePredictor& p,
                               const diffusion::NoiseSchedule& s, const BatchExtractConfig& cfg,
                               const fs::path& out_dir) {
    if (manifest.empty()) throw DataError("cannot extract features from an empty manifest");
    if (cfg.batch_size < 1 || cfg.workers < 1) throw UsageError("batch size and workers must be >= 1");
    if (cfg.method == Method::dire && cfg.k < 1) throw UsageError("DIRE needs k >= 1 DDIM steps");
    cfg.tsg.validate(p);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw DataError("cannot create output directory " + out_dir.string());

    const auto& entries = manifest.entries();
    const std::size_t n = entries.size();
    const PreprocessConfig pc = cfg.tsg.preprocess_for(p);
    const int t_or_k = cfg.method == Method::tsg ? cfg.tsg.t : cfg.k;
    std::vector<std::optional<std::string>> errors(n);

    const std::uint64_t calls_before = p.calls();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t chunks = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t c; (c = next.fetch_add(1)) < chunks;) {
            const std::size_t b0 = c * cfg.batch_size, b1 = std::min(n, b0 + cfg.batch_size);
            std::vector<ImageTensor> images;
            std::vector<std::size_t> idx;
            for (std::size_t i = b0; i < b1; ++i) {
                try {
                    images.push_back(preprocess(manifest.resolve(entries[i]), pc));
                    idx.push_back(i);
                } catch (const Error& e) {
                    errors[i] = e.what();
                }
            }
            if (images.empty()) continue;
            std::vector<ImageTensor> feats;
            try {
                feats = cfg.method == Method::tsg ? tsg_features(images, p, cfg.tsg.t)
                                                  : dire_features(images, p, s, cfg.k);
            } catch (const Error& e) {
                for (std::size_t i : idx) errors[i] = e.what();
                continue;
            }
            for (std::size_t j = 0; j < idx.size(); ++j) {
                const std::size_t i = idx[j];
                try {
                    const fs::path target = out_dir / feature_relpath(manifest, entries[i]);
                    fs::create_directories(target.parent_path());
                    save_feature({std::move(feats[j]), make_meta(cfg.method, t_or_k, p, manifest.resolve(entries[i]))},
                                 target);
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            }
        }
    };
    if (cfg.workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < cfg.workers; ++w) pool.emplace_back(worker);
    }

    ExtractionReport r;
    r.method = cfg.method;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.predictor_calls = p.calls() - calls_before;
    std::vector<data::ManifestEntry> feature_entries;
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) {
            ++r.failed;
            r.failures.push_back({entries[i].path, *errors[i]});
            continue;
        }
        ++r.succeeded;
        data::ManifestEntry e = entries[i];
        e.path = feature_relpath(manifest, entries[i]).generic_string();
        feature_entries.push_back(std::move(e));
    }
    if (!feature_entries.empty()) {
        json params = {{"method", to_string(cfg.method)},
                       {"t_or_k", t_or_k},
                       {"predictor_tag", p.tag()},
                       {"image_manifest_digest", manifest.digest()},
                       {"resolution", {pc.height, pc.width}}};
        data::DatasetManifest fm(std::move(feature_entries), std::move(params), fs::absolute(out_dir).string());
        r.feature_manifest = out_dir / "features.jsonl";
        data::save_manifest(fm, r.feature_manifest);
    }
    return r;
}

}  // namespace tsg::features
