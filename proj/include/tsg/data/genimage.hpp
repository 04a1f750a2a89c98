#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tsg/data/manifest.hpp"

namespace tsg::data {

// Directory layout of a benchmark root. Levels name the role of each path
// component below the root; files live directly under the last level.
struct LayoutConfig {
    std::vector<std::string> levels{"generator", "split", "class"};
    std::map<std::string, Label> class_dirs{{"ai", Label::synthetic}, {"nature", Label::real}};
    std::map<std::string, Split> split_dirs{{"train", Split::train}, {"val", Split::val}};
};

LayoutConfig layout_from_json(const json& j);

// Throws DataError for a missing root, an empty dataset or a path that does
// not fit the layout.
DatasetManifest scan_genimage_root(const std::filesystem::path& root, const LayoutConfig& layout = {},
                                   int workers = 1);

// IJG quality factor (1..100) whose scaled standard luminance table is closest
// in L1 to the file's table 0; ties go to the higher quality.
int estimate_jpeg_quality(const std::filesystem::path& file);
int estimate_jpeg_quality_bytes(const std::vector<std::uint8_t>& bytes, const std::string& label = "<memory>");

// Standard luminance table scaled for quality q, natural (row-major) order.
std::vector<int> ijg_luminance_table(int quality);

struct UnbiasedFilterConfig {
    int min_quality = 96;
    bool require_balance = true;
    // Drop entries without a JPEG quality (lossless files) instead of keeping them.
    bool jpeg_only = false;
    std::uint64_t seed = 0;

    void validate() const;
};

DatasetManifest filter_unbiased(const DatasetManifest& m, const UnbiasedFilterConfig& cfg);

}  // namespace tsg::data
