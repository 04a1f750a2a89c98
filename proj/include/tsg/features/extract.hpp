#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsg/data/manifest.hpp"
#include "tsg/diffusion/image.hpp"
#include "tsg/diffusion/predictor.hpp"
#include "tsg/diffusion/schedule.hpp"
#include "tsg/features/preprocess.hpp"

namespace tsg::features {

enum class Method { tsg, dire };
const char* to_string(Method m) noexcept;
Method parse_method(const std::string& s);

struct TSGConfig {
    int t = 0;
    // Preprocessing size; 0 selects the predictor's native resolution.
    int height = 0;
    int width = 0;

    // Throws UsageError unless 0 <= t < T and the size matches the predictor.
    void validate(const diffusion::NoisePredictor& p) const;
    PreprocessConfig preprocess_for(const diffusion::NoisePredictor& p) const;
};

struct FeatureMeta {
    Method method = Method::tsg;
    // Timestep for TSG, DDIM step count for DIRE.
    int t_or_k = 0;
    std::string predictor_tag;
    std::string source_path;
    std::string extracted_utc;

    friend bool operator==(const FeatureMeta&, const FeatureMeta&) = default;
};

struct FeatureMap {
    diffusion::ImageTensor data;
    FeatureMeta meta;

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

// One predictor evaluation per image: F = eps(x, t).
std::vector<diffusion::ImageTensor> tsg_features(std::span<const diffusion::ImageTensor> images,
                                                 const diffusion::NoisePredictor& p, int t);
// |x - denoise(invert(x, k), k)|, 2k evaluations per image.
std::vector<diffusion::ImageTensor> dire_features(std::span<const diffusion::ImageTensor> images,
                                                  const diffusion::NoisePredictor& p, const diffusion::NoiseSchedule& s,
                                                  int k);

FeatureMap extract_tsg(const std::filesystem::path& image, const diffusion::NoisePredictor& p, const TSGConfig& cfg);
FeatureMap extract_dire(const std::filesystem::path& image, const diffusion::NoisePredictor& p,
                        const diffusion::NoiseSchedule& s, int k, const TSGConfig& cfg = {});

// Feature file: one JSON header line
//   {"schema":"tsgfeat/1","shape":[H,W,C],"dtype":"f32le","method","t_or_k","predictor_tag","source_path",...}
// followed by H*W*C little-endian float32 values in (H, W, C) order.
inline constexpr const char* kFeatureSchema = "tsgfeat/1";
inline constexpr const char* kFeatureExtension = ".tsgfeat";

std::string encode_feature(const FeatureMap& f);
FeatureMap decode_feature(std::string_view bytes, const std::string& label = "<memory>");
void save_feature(const FeatureMap& f, const std::filesystem::path& path);
FeatureMap load_feature(const std::filesystem::path& path);

struct ExtractionFailure {
    std::string path;
    std::string error;
};

struct ExtractionReport {
    Method method = Method::tsg;
    std::size_t succeeded = 0;
    std::size_t failed = 0;
    double wall_seconds = 0;
    std::uint64_t predictor_calls = 0;
    std::vector<ExtractionFailure> failures;
    // Manifest of the written feature files (same labels and splits).
    std::filesystem::path feature_manifest;
};

json to_json(const ExtractionReport& r);

struct BatchExtractConfig {
    Method method = Method::tsg;
    TSGConfig tsg;
    // DDIM steps for DIRE.
    int k = 20;
    int workers = 1;
    // Images per predictor call.
    int batch_size = 16;
};

// Writes one feature file per entry under out_dir, mirroring each image's
// path below the manifest root, plus out_dir/features.jsonl. Undecodable
// images are reported and skipped. Throws DataError for an empty manifest or
// an unwritable out_dir.
ExtractionReport batch_extract(const data::DatasetManifest& manifest, const diffusion::NoisePredictor& p,
                               const diffusion::NoiseSchedule& s, const BatchExtractConfig& cfg,
                               const std::filesystem::path& out_dir);

// Relative location of an entry's feature file inside an output directory.
std::filesystem::path feature_relpath(const data::DatasetManifest& m, const data::ManifestEntry& e);

}  // namespace tsg::features
