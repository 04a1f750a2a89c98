#include <cmath>
#include <fstream>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "support/fake_predictors.hpp"
#include "support/temp_dir.hpp"
#include "tsg/common/error.hpp"
#include "tsg/diffusion/schedule.hpp"
#include "tsg/features/extract.hpp"
#include "tsg/features/preprocess.hpp"

using namespace tsg;
using namespace tsg::features;
using tsg::diffusion::ImageTensor;
namespace fs = std::filesystem;

namespace {

fs::path write_noise_png(const fs::path& path, int h, int w, std::uint64_t seed, int type = CV_8UC3) {
    fs::create_directories(path.parent_path());
    cv::Mat m(h, w, type);
    cv::RNG rng(seed);
    rng.fill(m, cv::RNG::UNIFORM, 0, 256);
    REQUIRE(cv::imwrite(path.string(), m));
    return path;
}

fs::path write_constant_png(const fs::path& path, int h, int w, int value) {
    cv::Mat m(h, w, CV_8UC3, cv::Scalar(value, value, value));
    REQUIRE(cv::imwrite(path.string(), m));
    return path;
}

data::DatasetManifest image_manifest(const fs::path& dir, int n, int size) {
    std::vector<data::ManifestEntry> entries;
    for (int i = 0; i < n; ++i) {
        const fs::path p = write_noise_png(dir / "img" / ("im" + std::to_string(i) + ".png"), size, size, 100 + i);
        entries.push_back({p.string(), i % 2 ? data::Label::synthetic : data::Label::real, "g", data::Split::train,
                           std::nullopt});
    }
    return data::DatasetManifest(entries, json::object(), dir.string());
}

}  // namespace

TEST_CASE("preprocess shape and value mapping") {
    testing::TempDir tmp;
    fs::create_directories(tmp.path());
    const ImageTensor x = preprocess(write_noise_png(tmp / "big.png", 512, 512, 1), {256, 256});
    CHECK(x.height() == 256);
    CHECK(x.width() == 256);
    CHECK(x.channels() == 3);
    CHECK(x.within_range());

    for (float v : preprocess(write_constant_png(tmp / "black.png", 40, 30, 0), {32, 32}).values()) CHECK(v == -1.0f);
    for (float v : preprocess(write_constant_png(tmp / "white.png", 40, 30, 255), {32, 32}).values()) CHECK(v == 1.0f);
}

TEST_CASE("preprocess converts grayscale and BGR order") {
    testing::TempDir tmp;
    cv::Mat gray(8, 8, CV_8UC1, cv::Scalar(51));
    REQUIRE(cv::imwrite((tmp / "g.png").string(), gray));
    const ImageTensor g = preprocess(tmp / "g.png", {8, 8});
    for (float v : g.values()) CHECK(v == doctest::Approx(51 / 127.5 - 1.0));

    cv::Mat red(4, 4, CV_8UC3, cv::Scalar(0, 0, 255));
    REQUIRE(cv::imwrite((tmp / "r.png").string(), red));
    const ImageTensor r = preprocess(tmp / "r.png", {4, 4});
    CHECK(r.at(0, 0, 0) == 1.0f);
    CHECK(r.at(0, 0, 1) == -1.0f);
    CHECK(r.at(0, 0, 2) == -1.0f);
}

TEST_CASE("preprocess rejects bad input") {
    testing::TempDir tmp;
    std::ofstream(tmp / "junk.png") << "not an image";
    CHECK_THROWS_AS(preprocess(tmp / "junk.png", {8, 8}), DataError);
    CHECK_THROWS_AS(preprocess(tmp / "missing.png", {8, 8}), DataError);
    cv::Mat deep(4, 4, CV_16UC3, cv::Scalar(1000, 1000, 1000));
    REQUIRE(cv::imwrite((tmp / "deep.png").string(), deep));
    CHECK_THROWS_AS(preprocess(tmp / "deep.png", {8, 8}), DataError);
}

TEST_CASE("TSG extraction makes exactly one predictor call") {
    testing::TempDir tmp;
    const fs::path img = write_noise_png(tmp / "a.png", 20, 24, 3);
    testing::AffinePredictor p(16, 100, 0.5f, -0.25f);
    const FeatureMap f = extract_tsg(img, p, {});
    CHECK(p.calls() == 1);
    CHECK(f.data.height() == 16);
    CHECK(f.data.channels() == 3);
    CHECK(f.meta.method == Method::tsg);
    CHECK(f.meta.t_or_k == 0);
    CHECK(f.meta.source_path == img.string());
    CHECK(!f.meta.extracted_utc.empty());
    const ImageTensor x = preprocess(img, {16, 16});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(f.data.values()[i] == 0.5f * x.values()[i] - 0.25f);

    const FeatureMap g = extract_tsg(img, p, {});
    CHECK(g.data == f.data);

    TSGConfig bad;
    bad.t = 100;
    CHECK_THROWS_AS(extract_tsg(img, p, bad), UsageError);
    bad = {};
    bad.height = 32;
    CHECK_THROWS_AS(extract_tsg(img, p, bad), UsageError);
}

TEST_CASE("DIRE with a zero predictor reconstructs the input") {
    testing::TempDir tmp;
    const fs::path img = write_noise_png(tmp / "a.png", 16, 16, 4);
    const auto zero = testing::zero_predictor(16, 1000);
    const auto sched = diffusion::default_schedule();
    const FeatureMap one = extract_dire(img, zero, sched, 1);
    for (float v : one.data.values()) CHECK(v == 0.0f);
    const FeatureMap f = extract_dire(img, zero, sched, 20);
    CHECK(zero.calls() == 2 + 40);
    for (float v : f.data.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 2e-6f);
    }
    CHECK(f.meta.method == Method::dire);
    CHECK(f.meta.t_or_k == 20);
    CHECK_THROWS_AS(extract_dire(img, zero, sched, 0), UsageError);
}

TEST_CASE("DIRE features are nonnegative") {
    testing::TempDir tmp;
    const fs::path img = write_noise_png(tmp / "a.png", 16, 16, 5);
    testing::AffinePredictor p(16, 1000, 0.3f, 0.1f);
    const FeatureMap f = extract_dire(img, p, diffusion::default_schedule(), 5);
    CHECK(p.calls() == 10);
    double total = 0;
    for (float v : f.data.values()) {
        CHECK(v >= 0.0f);
        total += v;
    }
    CHECK(total > 0);
}

TEST_CASE("feature files round-trip bit-identically") {
    std::mt19937_64 rng(9);
    std::normal_distribution<float> g;
    FeatureMap f{ImageTensor(7, 5, 3, diffusion::ValueRange::unbounded()), {Method::tsg, 50, "toy-x", "a/b.png", "t"}};
    for (float& v : f.data.values()) v = g(rng);
    f.data.values()[3] = -0.0f;
    f.data.values()[4] = std::numeric_limits<float>::denorm_min();
    const std::string bytes = encode_feature(f);
    const FeatureMap back = decode_feature(bytes);
    CHECK(back.meta == f.meta);
    REQUIRE(back.data.size() == f.data.size());
    CHECK(std::memcmp(back.data.values().data(), f.data.values().data(), f.data.size() * 4) == 0);
    CHECK(encode_feature(back) == bytes);

    testing::TempDir tmp;
    save_feature(f, tmp / "f.tsgfeat");
    CHECK(load_feature(tmp / "f.tsgfeat") == f);
}

TEST_CASE("feature decoding detects corruption") {
    FeatureMap f{ImageTensor(4, 4, 3, diffusion::ValueRange::unbounded()), {}};
    const std::string bytes = encode_feature(f);
    CHECK_THROWS_AS(decode_feature(bytes.substr(0, bytes.size() - 3)), DataError);
    CHECK_THROWS_AS(decode_feature(bytes + "xxxx"), DataError);
    CHECK_THROWS_AS(decode_feature("{not json\n"), DataError);
    CHECK_THROWS_AS(decode_feature("no newline"), DataError);

    // Header announces 256x256x3, payload holds 128x128x3.
    FeatureMap small{ImageTensor(128, 128, 3, diffusion::ValueRange::unbounded()), {}};
    std::string s = encode_feature(small);
    const std::size_t nl = s.find('\n');
    json h = json::parse(s.substr(0, nl));
    h["shape"] = {256, 256, 3};
    const std::string forged = h.dump() + s.substr(nl);
    try {
        decode_feature(forged);
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    FeatureMap dire{ImageTensor(2, 2, 1, diffusion::ValueRange::unbounded()), {Method::dire, 3, "", "", ""}};
    dire.data.values()[0] = -1.0f;
    CHECK_THROWS_AS(decode_feature(encode_feature(dire)), DataError);
}

TEST_CASE("batch extraction counts and layout") {
    testing::TempDir tmp;
    const auto m = image_manifest(tmp.path(), 10, 20);
    testing::AffinePredictor p(16, 1000, 1.0f, 0.0f);

    BatchExtractConfig cfg;
    cfg.batch_size = 4;
    const ExtractionReport r = batch_extract(m, p, diffusion::default_schedule(), cfg, tmp / "tsg");
    CHECK(r.succeeded == 10);
    CHECK(r.failed == 0);
    CHECK(r.predictor_calls == 10);
    CHECK(fs::exists(tmp / "tsg" / "img" / "im3.png.tsgfeat"));
    const data::DatasetManifest fm = data::load_manifest(r.feature_manifest);
    CHECK(fm.size() == 10);
    CHECK(fm.tally() == m.tally());
    for (const auto& e : fm.entries()) CHECK(fs::exists(fm.resolve(e)));

    cfg.method = Method::dire;
    cfg.k = 20;
    cfg.workers = 2;
    const ExtractionReport d = batch_extract(m, p, diffusion::default_schedule(), cfg, tmp / "dire");
    CHECK(d.succeeded == 10);
    CHECK(d.predictor_calls == 400);
    CHECK(load_feature(tmp / "dire" / "img" / "im0.png.tsgfeat").meta.method == Method::dire);
}

TEST_CASE("batch extraction survives an undecodable file") {
    testing::TempDir tmp;
    const auto m = image_manifest(tmp.path(), 10, 16);
    std::ofstream(tmp / "img" / "im4.png", std::ios::trunc) << "garbage";
    testing::AffinePredictor p(16, 1000);
    BatchExtractConfig cfg;
    cfg.batch_size = 3;
    const ExtractionReport r = batch_extract(m, p, diffusion::default_schedule(), cfg, tmp / "out");
    CHECK(r.succeeded == 9);
    CHECK(r.failed == 1);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].path.find("im4.png") != std::string::npos);
    CHECK(r.predictor_calls == 9);
    CHECK(data::load_manifest(r.feature_manifest).size() == 9);
    CHECK(to_json(r)["failed"] == 1);

    CHECK_THROWS_AS(batch_extract(data::DatasetManifest{}, p, diffusion::default_schedule(), cfg, tmp / "x"),
                    DataError);
}
