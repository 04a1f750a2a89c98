#include "tsg/features/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tsg/common/error.hpp"
#include "tsg/common/io.hpp"

namespace tsg::features {

namespace {

diffusion::ImageTensor to_model_space(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    std::vector<float> data(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
    std::size_t i = 0;
    for (int y = 0; y < rgb.rows; ++y) {
        const unsigned char* row = rgb.ptr<unsigned char>(y);
        for (int x = 0; x < rgb.cols * 3; ++x) data[i++] = static_cast<float>(row[x]) / 127.5f - 1.0f;
    }
    return diffusion::ImageTensor(rgb.rows, rgb.cols, 3, std::move(data));
}

cv::Mat decode(const std::vector<std::uint8_t>& bytes, const std::string& label) {
    if (bytes.empty()) throw DataError("empty image file: " + label);
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat img = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
    if (img.empty() || img.rows == 0 || img.cols == 0) throw DataError("cannot decode image: " + label);
    if (img.depth() != CV_8U) throw DataError("only 8-bit images are supported: " + label);
    cv::Mat bgr;
    switch (img.channels()) {
        case 1: cv::cvtColor(img, bgr, cv::COLOR_GRAY2BGR); break;
        case 3: bgr = img; break;
        case 4: cv::cvtColor(img, bgr, cv::COLOR_BGRA2BGR); break;
        default: throw DataError("unsupported channel count in " + label);
    }
    return bgr;
}

}  // namespace

diffusion::ImageTensor preprocess_bytes(const std::vector<std::uint8_t>& encoded, const PreprocessConfig& cfg, const std::string& label) {
    if (cfg.height <= 0 || cfg.width <= 0) throw UsageError("target resolution must be positive");
    cv::Mat bgr = decode(encoded, label);
    if (bgr.rows != cfg.height || bgr.cols != cfg.width) {
        cv::Mat resized;
        cv::resize(bgr, resized, cv::Size(cfg.width, cfg.height), 0, 0, cv::INTER_LINEAR);
        bgr = resized;
    }
    return to_model_space(bgr);
}

diffusion::ImageTensor preprocess(const std::filesystem::path& image, const PreprocessConfig& cfg) {
    return preprocess_bytes(read_binary_file(image), cfg, image.string());
}

diffusion::ImageTensor load_image(const std::filesystem::path& image) {
    return to_model_space(decode(read_binary_file(image), image.string()));
}

void save_png(const diffusion::ImageTensor& image, const std::filesystem::path& path) {
    if (image.channels() != 3) throw DataError("save_png expects an RGB image");
    cv::Mat rgb(image.height(), image.width(), CV_8UC3);
    std::size_t i = 0;
    auto v = image.values();
    for (int y = 0; y < rgb.rows; ++y) {
        unsigned char* row = rgb.ptr<unsigned char>(y);
        for (int x = 0; x < rgb.cols * 3; ++x) {
            const float u = (std::clamp(v[i++], -1.0f, 1.0f) + 1.0f) * 127.5f;
            row[x] = static_cast<unsigned char>(std::lround(u));
        }
    }
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<unsigned char> out;
    if (!cv::imencode(".png", bgr, out)) throw DataError("PNG encoding failed for " + path.string());
    write_file_atomic(path, std::string(out.begin(), out.end()));
}

}  // namespace tsg::features
