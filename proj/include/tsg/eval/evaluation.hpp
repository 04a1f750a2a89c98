#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsg/classifier/classifier.hpp"
#include "tsg/data/manifest.hpp"
#include "tsg/diffusion/predictor.hpp"
#include "tsg/diffusion/schedule.hpp"
#include "tsg/features/extract.hpp"

namespace tsg::eval {

// Cross-generator accuracy matrix: rows are training tags, columns test tags.
struct EvalMatrix {
    std::vector<std::string> train_tags;
    std::vector<std::string> test_tags;
    std::vector<std::vector<double>> acc;
    std::vector<std::vector<std::size_t>> counts;
    // Optional per-cell AUC (same shape as acc when present).
    std::vector<std::vector<double>> auc;
    json meta = json::object();

    // Throws DataError on ragged dimensions or accuracies outside [0, 1].
    void validate() const;
    friend bool operator==(const EvalMatrix&, const EvalMatrix&) = default;
};

json to_json(const EvalMatrix& m);
EvalMatrix eval_matrix_from_json(const json& j);

using TaggedCheckpoint = std::pair<std::string, const classifier::ClassifierCheckpoint*>;
using TaggedFeatures = std::pair<std::string, data::DatasetManifest>;

// acc[i][j] = accuracy of classifier i on the `split` entries of test set j.
EvalMatrix cross_validate(const std::vector<TaggedCheckpoint>& ckpts, const std::vector<TaggedFeatures>& test_sets,
                          data::Split split = data::Split::val);

struct Grouping {
    std::vector<std::string> diff_based;
    std::vector<std::string> gan;
};

// Column means (over training tags) averaged within each group; avg is the
// mean of the two group means.
struct SummaryRow {
    double diff_based = 0;
    double gan = 0;
    double avg = 0;
};

SummaryRow summarize_table(const EvalMatrix& m, const Grouping& g);
std::string format_summary(const SummaryRow& r);

struct TimingReport {
    features::Method method = features::Method::tsg;
    int n_images = 0;
    int batch_size = 0;
    int k = 0;
    double wall_seconds = 0;
    std::uint64_t predictor_calls = 0;
    std::string device;

    friend bool operator==(const TimingReport&, const TimingReport&) = default;
};

json to_json(const TimingReport& r);
TimingReport timing_report_from_json(const json& j);

// Expected predictor calls: n for TSG, 2 k n for DIRE.
std::uint64_t expected_calls(features::Method m, int n, int k);

// Times feature extraction over n pre-decoded images after an untimed warm-up
// batch; throws DataError when fewer than n images are supplied and ModelError
// if the predictor-call count deviates from the structural formula.
TimingReport timing_benchmark(features::Method method, const diffusion::NoisePredictor& p,
                              const diffusion::NoiseSchedule& s, std::span<const diffusion::ImageTensor> images,
                              int batch_size, int k = 20, int n = 100);

// Device label used in reports, e.g. "cpu/avx2".
std::string device_tag();

// <stem>.csv, <stem>.json and <stem>.png (heatmap of the matrix).
void emit_reports(const EvalMatrix& m, const std::filesystem::path& stem);
void emit_reports(const TimingReport& r, const std::filesystem::path& stem);

// Matrix CSV: header row of test tags, first column train tags, 4 decimals.
std::string matrix_csv(const EvalMatrix& m);

}  // namespace tsg::eval
