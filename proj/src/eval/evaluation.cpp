#include "tsg/eval/evaluation.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tsg/common/error.hpp"
#include "tsg/eval/metrics.hpp"
#include "tsg/explain/gradcam.hpp"
#include "tsg/simd/kernels.hpp"

namespace fs = std::filesystem;

namespace tsg::eval {

namespace {

std::size_t index_of(const std::vector<std::string>& tags, const std::string& t) {
    for (std::size_t i = 0; i < tags.size(); ++i)
        if (tags[i] == t) return i;
    throw UsageError("unknown tag '" + t + "'");
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

void EvalMatrix::validate() const {
    if (acc.size() != train_tags.size()) throw DataError("matrix rows do not match training tags");
    for (const auto& row : acc) {
        if (row.size() != test_tags.size()) throw DataError("matrix columns do not match test tags");
        for (double v : row)
            if (!(v >= 0.0 && v <= 1.0)) throw DataError("accuracy outside [0, 1] in matrix");
    }
    if (!counts.empty()) {
        if (counts.size() != train_tags.size()) throw DataError("count rows do not match training tags");
        for (const auto& row : counts)
            if (row.size() != test_tags.size()) throw DataError("count columns do not match test tags");
    }
    if (!auc.empty()) {
        if (auc.size() != train_tags.size()) throw DataError("AUC rows do not match training tags");
        for (const auto& row : auc)
            if (row.size() != test_tags.size()) throw DataError("AUC columns do not match test tags");
    }
}

json to_json(const EvalMatrix& m) {
    return {{"schema", "tsgeval/1"}, {"train_tags", m.train_tags}, {"test_tags", m.test_tags}, {"acc", m.acc},
            {"counts", m.counts},    {"auc", m.auc},               {"meta", m.meta}};
}

EvalMatrix eval_matrix_from_json(const json& j) {
    EvalMatrix m;
    try {
        if (j.value("schema", "") != "tsgeval/1") throw DataError("not an evaluation matrix");
        m.train_tags = j.at("train_tags").get<std::vector<std::string>>();
        m.test_tags = j.at("test_tags").get<std::vector<std::string>>();
        m.acc = j.at("acc").get<std::vector<std::vector<double>>>();
        m.counts = j.value("counts", json::array()).get<std::vector<std::vector<std::size_t>>>();
        m.auc = j.value("auc", json::array()).get<std::vector<std::vector<double>>>();
        m.meta = j.value("meta", json::object());
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed evaluation matrix: ") + e.what());
    }
    m.validate();
    return m;
}

EvalMatrix cross_validate(const std::vector<TaggedCheckpoint>& ckpts, const std::vector<TaggedFeatures>& test_sets,
                          data::Split split) {
    if (ckpts.empty() || test_sets.empty()) throw UsageError("cross validation needs classifiers and test sets");
    EvalMatrix m;
    for (const auto& [tag, ck] : ckpts) {
        if (!ck) throw UsageError("missing classifier for tag '" + tag + "'");
        m.train_tags.push_back(tag);
    }
    for (const auto& [tag, fm] : test_sets) {
        if (fm.select(std::nullopt, split).empty())
            throw DataError("no " + std::string(data::to_string(split)) + " features for test tag '" + tag + "'");
        m.test_tags.push_back(tag);
    }
    bool with_auc = true;
    for (const auto& [ttag, ck] : ckpts) {
        std::vector<double> acc_row, auc_row;
        std::vector<std::size_t> count_row;
        for (const auto& [tag, fm] : test_sets) {
            const auto preds = classifier::predict_manifest(*ck, fm, split);
            std::vector<data::Label> pred, truth;
            std::vector<double> scores;
            for (const auto& p : preds) {
                pred.push_back(p.result.label);
                truth.push_back(p.truth);
                scores.push_back(p.result.prob_synthetic);
            }
            acc_row.push_back(accuracy(pred, truth));
            count_row.push_back(preds.size());
            try {
                auc_row.push_back(auc(scores, truth));
            } catch (const DataError&) {
                with_auc = false;
            }
        }
        m.acc.push_back(std::move(acc_row));
        m.counts.push_back(std::move(count_row));
        m.auc.push_back(std::move(auc_row));
    }
    if (!with_auc) m.auc.clear();
    m.meta = {{"split", data::to_string(split)}};
    return m;
}

SummaryRow summarize_table(const EvalMatrix& m, const Grouping& g) {
    m.validate();
    if (g.diff_based.empty() || g.gan.empty()) throw UsageError("summary needs nonempty diffusion and GAN groups");
    if (m.train_tags.empty()) throw UsageError("summary of an empty matrix");
    auto column_mean = [&](const std::string& tag) {
        const std::size_t j = index_of(m.test_tags, tag);
        double s = 0;
        for (const auto& row : m.acc) s += row[j];
        return s / static_cast<double>(m.acc.size());
    };
    auto group_mean = [&](const std::vector<std::string>& tags) {
        double s = 0;
        for (const auto& t : tags) s += column_mean(t);
        return s / static_cast<double>(tags.size());
    };
    SummaryRow r;
    r.diff_based = group_mean(g.diff_based);
    r.gan = group_mean(g.gan);
    r.avg = (r.diff_based + r.gan) / 2.0;
    return r;
}

std::string format_summary(const SummaryRow& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "Diff.-based | BigGAN | Avg\n%.1f | %.1f | %.1f\n", 100 * r.diff_based, 100 * r.gan,
                  100 * r.avg);
    return buf;
}

json to_json(const TimingReport& r) {
    return {{"schema", "tsgtiming/1"},
            {"method", features::to_string(r.method)},
            {"n_images", r.n_images},
            {"batch_size", r.batch_size},
            {"k", r.k},
            {"wall_seconds", r.wall_seconds},
            {"predictor_calls", r.predictor_calls},
            {"device", r.device}};
}

TimingReport timing_report_from_json(const json& j) {
    TimingReport r;
    try {
        r.method = features::parse_method(j.at("method").get<std::string>());
        r.n_images = j.at("n_images");
        r.batch_size = j.at("batch_size");
        r.k = j.at("k");
        r.wall_seconds = j.at("wall_seconds");
        r.predictor_calls = j.at("predictor_calls");
        r.device = j.at("device");
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed timing report: ") + e.what());
    }
    return r;
}

std::uint64_t expected_calls(features::Method m, int n, int k) {
    return m == features::Method::tsg ? static_cast<std::uint64_t>(n) : 2ull * k * n;
}

std::string device_tag() { return std::string("cpu/") + simd::to_string(simd::active_isa()); }

TimingReport timing_benchmark(features::Method method, const diffusion::NoisePredictor& p,
                              const diffusion::NoiseSchedule& s, std::span<const diffusion::ImageTensor> images,
                              int batch_size, int k, int n) {
    if (n < 1 || batch_size < 1) throw UsageError("benchmark needs n >= 1 and batch size >= 1");
    if (method == features::Method::dire && k < 1) throw UsageError("DIRE needs k >= 1");
    if (images.size() < static_cast<std::size_t>(n))
        throw DataError("benchmark needs " + std::to_string(n) + " images, got " + std::to_string(images.size()));
    auto run = [&](std::span<const diffusion::ImageTensor> chunk) {
        if (method == features::Method::tsg) return features::tsg_features(chunk, p, 0);
        return features::dire_features(chunk, p, s, k);
    };
    run(images.first(std::min(n, batch_size)));

    const std::uint64_t before = p.calls();
    const auto t0 = std::chrono::steady_clock::now();
    for (int b0 = 0; b0 < n; b0 += batch_size) run(images.subspan(b0, std::min(batch_size, n - b0)));
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    TimingReport r{method, n, batch_size, method == features::Method::dire ? k : 0, wall, p.calls() - before,
                   device_tag()};
    const std::uint64_t expect = expected_calls(method, n, k);
    if (r.predictor_calls != expect)
        throw ModelError("benchmark made " + std::to_string(r.predictor_calls) + " predictor calls, expected " +
                         std::to_string(expect));
    return r;
}

std::string matrix_csv(const EvalMatrix& m) {
    m.validate();
    std::ostringstream out;
    out << "train\\test";
    for (const auto& t : m.test_tags) out << "," << t;
    out << "\n";
    for (std::size_t i = 0; i < m.train_tags.size(); ++i) {
        out << m.train_tags[i];
        for (double v : m.acc[i]) out << "," << fixed4(v);
        out << "\n";
    }
    return out.str();
}

namespace {

void write_matrix_png(const EvalMatrix& m, const fs::path& path) {
    const int cell = 72, margin = 110;
    const int rows = static_cast<int>(m.train_tags.size()), cols = static_cast<int>(m.test_tags.size());
    cv::Mat img(margin + rows * cell + 10, margin + cols * cell + 10, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    for (int j = 0; j < cols; ++j)
        cv::putText(img, m.test_tags[j].substr(0, 10), {margin + j * cell + 4, margin - 10}, font, 0.4, {0, 0, 0}, 1,
                    cv::LINE_AA);
    for (int i = 0; i < rows; ++i) {
        cv::putText(img, m.train_tags[i].substr(0, 14), {4, margin + i * cell + cell / 2 + 4}, font, 0.4, {0, 0, 0}, 1,
                    cv::LINE_AA);
        for (int j = 0; j < cols; ++j) {
            const double v = m.acc[i][j];
            const explain::Rgb c = explain::colormap(static_cast<float>(v));
            const cv::Rect r(margin + j * cell, margin + i * cell, cell - 2, cell - 2);
            cv::rectangle(img, r, cv::Scalar(c[2], c[1], c[0]), cv::FILLED);
            const double lum = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
            char label[16];
            std::snprintf(label, sizeof label, "%.1f", 100 * v);
            cv::putText(img, label, {r.x + 14, r.y + cell / 2 + 4}, font, 0.5,
                        lum > 128 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
        }
    }
    cv::putText(img, "train \\ test", {4, 20}, font, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", img, buf)) throw DataError("PNG encoding failed for " + path.string());
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

void ensure_parent(const fs::path& stem) {
    std::error_code ec;
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path(), ec);
    if (ec) throw DataError("cannot create report directory " + stem.parent_path().string());
}

}  // namespace

void emit_reports(const EvalMatrix& m, const fs::path& stem) {
    ensure_parent(stem);
    write_file_atomic(fs::path(stem.string() + ".csv"), matrix_csv(m));
    json j = to_json(m);
    j["device"] = device_tag();
    j["version"] = version_tag();
    write_json_file(fs::path(stem.string() + ".json"), j);
    write_matrix_png(m, fs::path(stem.string() + ".png"));
}

void emit_reports(const TimingReport& r, const fs::path& stem) {
    ensure_parent(stem);
    json j = to_json(r);
    j["expected_calls"] = expected_calls(r.method, r.n_images, r.k);
    j["version"] = version_tag();
    write_json_file(fs::path(stem.string() + ".json"), j);
}

}  // namespace tsg::eval
