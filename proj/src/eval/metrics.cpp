#include "tsg/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tsg/common/error.hpp"
#include "tsg/common/rng.hpp"

namespace tsg::eval {

double accuracy(std::span<const data::Label> predicted, std::span<const data::Label> truth) {
    if (predicted.empty()) throw UsageError("accuracy of an empty prediction set");
    if (predicted.size() != truth.size())
        throw UsageError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i];
    return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

double auc(std::span<const double> scores, std::span<const data::Label> truth) {
    if (scores.size() != truth.size()) throw UsageError("auc: score and label counts differ");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Rank-sum with midranks for ties.
    double rank_sum = 0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (std::size_t q = i; q < j; ++q)
            if (truth[idx[q]] == data::Label::synthetic) rank_sum += mid;
        i = j;
    }
    for (data::Label l : truth) (l == data::Label::synthetic ? pos : neg)++;
    if (pos == 0 || neg == 0) throw DataError("auc needs both real and synthetic samples");
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    return (rank_sum - p * (p + 1) / 2.0) / (p * n);
}

BootstrapResult bootstrap_mean_difference(std::span<const double> a, std::span<const double> b, int resamples,
                                          std::uint64_t seed, double level) {
    if (a.empty() || b.empty()) throw UsageError("bootstrap needs two nonempty samples");
    if (resamples < 1) throw UsageError("bootstrap needs at least one resample");
    if (!(level > 0 && level < 1)) throw UsageError("bootstrap level must lie in (0, 1)");
    auto mean = [](std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    Rng rng = make_rng(seed, "bootstrap");
    std::uniform_int_distribution<std::size_t> pa(0, a.size() - 1), pb(0, b.size() - 1);
    std::vector<double> diffs(resamples);
    int positive = 0;
    for (int r = 0; r < resamples; ++r) {
        double sa = 0, sb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) sa += a[pa(rng)];
        for (std::size_t i = 0; i < b.size(); ++i) sb += b[pb(rng)];
        diffs[r] = sb / b.size() - sa / a.size();
        positive += diffs[r] > 0;
    }
    std::sort(diffs.begin(), diffs.end());
    std::size_t q = static_cast<std::size_t>(std::floor((1.0 - level) * resamples));
    q = std::min(q, diffs.size() - 1);
    return {mean(b) - mean(a), diffs[q], static_cast<double>(positive) / resamples, resamples};
}

}  // namespace tsg::eval
