#pragma once

// Published full-scale numbers, kept for comparison in reports. Not
// reproducible at desk scale.
namespace tsg::eval::reference {

struct TableRow {
    double diff_based, biggan, avg;
};

// Accuracy (%) on the selected GenImage subsets.
inline constexpr TableRow tsg_t0{94.1, 95.6, 94.9};
inline constexpr TableRow tsg_t50{87.5, 90.8, 89.2};

// Seconds to produce 100 feature images on one RTX A6000.
inline constexpr double dire_seconds_100 = 277.1;  // batch 50, 20 + 20 DDIM steps
inline constexpr double tsg_seconds_100 = 26.3;    // batch 5

}  // namespace tsg::eval::reference
