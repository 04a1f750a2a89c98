#pragma once

#include <cstdint>
#include <filesystem>

#include "tsg/data/manifest.hpp"

namespace tsg::data {

struct ToyPatchConfig {
    int count = 5000;
    int size = 32;
    // Crop side as a fraction of the photo's shorter side.
    double min_scale = 0.08;
    double max_scale = 0.5;
    std::uint64_t seed = 0;
};

// Writes `count` PNG patches (random position and scale, area-resampled) cut
// from the photos in photo_dir into out_dir. Returns the written paths.
std::vector<std::filesystem::path> build_toy_real_patches(const std::filesystem::path& photo_dir,
                                                          const std::filesystem::path& out_dir,
                                                          const ToyPatchConfig& cfg);

struct ToySplitConfig {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    // Downsample the larger class inside each split to the smaller one's size.
    bool balance = false;
};

// Stratified split of the images in real_dir / fake_dir (fake_dir may be empty
// for a real-only manifest). The split of each class depends only on that
// class's file list and the seed.
DatasetManifest build_toy_manifest(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
                                   const ToySplitConfig& cfg);

}  // namespace tsg::data
