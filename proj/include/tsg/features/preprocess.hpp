#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsg/diffusion/image.hpp"

namespace tsg::features {

struct PreprocessConfig {
    int height = 256;
    int width = 256;
};

// Decodes an 8-bit PNG/JPEG, converts to RGB (grayscale replicated), resizes
// bilinearly to the target size and maps [0, 255] to [-1, 1].
diffusion::ImageTensor preprocess(const std::filesystem::path& image, const PreprocessConfig& cfg);
diffusion::ImageTensor preprocess_bytes(const std::vector<std::uint8_t>& encoded, const PreprocessConfig& cfg,
                                        const std::string& label = "<memory>");

// Decodes without resizing, in model space.
diffusion::ImageTensor load_image(const std::filesystem::path& image);

// Writes a model-space RGB image as an 8-bit PNG (values clamped to [-1, 1]).
void save_png(const diffusion::ImageTensor& image, const std::filesystem::path& path);

}  // namespace tsg::features
