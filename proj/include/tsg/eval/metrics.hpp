#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tsg/data/manifest.hpp"

namespace tsg::eval {

// Fraction of matching labels. Throws UsageError on empty or unequal inputs.
double accuracy(std::span<const data::Label> predicted, std::span<const data::Label> truth);

// Area under the ROC curve of scores for the synthetic class (ties count one
// half). Throws DataError unless both classes are present.
double auc(std::span<const double> scores, std::span<const data::Label> truth);

struct BootstrapResult {
    double observed = 0;  // mean(b) - mean(a)
    double lower = 0;     // one-sided lower bound at the requested level
    double fraction_positive = 0;
    int resamples = 0;
};

// Percentile bootstrap of mean(b) - mean(a), resampling each group independently.
BootstrapResult bootstrap_mean_difference(std::span<const double> a, std::span<const double> b, int resamples,
                                          std::uint64_t seed, double level = 0.95);

}  // namespace tsg::eval
