#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tsg/common/error.hpp"
#include "tsg/explain/gradcam.hpp"

namespace fs = std::filesystem;

namespace tsg::explain {

const std::array<Rgb, 256>& jet_colormap() {
    static const std::array<Rgb, 256> lut{{
#include "jet_lut.inc"
    }};
    return lut;
}

Rgb colormap(float v) {
    const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
    return jet_colormap()[static_cast<std::size_t>(std::lround(c * 255.0f))];
}

RgbImage overlay(const HeatMap& hm, const fs::path& image, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("overlay alpha must lie in [0, 1]");
    if (hm.height <= 0 || hm.width <= 0) throw UsageError("empty heatmap");
    cv::Mat src = cv::imread(image.string(), cv::IMREAD_COLOR);
    if (src.empty()) throw DataError("cannot read image " + image.string());
    cv::Mat resized;
    cv::resize(src, resized, cv::Size(hm.width, hm.height), 0, 0, cv::INTER_LINEAR);

    RgbImage out{hm.height, hm.width, std::vector<std::uint8_t>(static_cast<std::size_t>(hm.height) * hm.width * 3)};
    for (int y = 0; y < hm.height; ++y) {
        const cv::Vec3b* row = resized.ptr<cv::Vec3b>(y);
        for (int x = 0; x < hm.width; ++x) {
            const Rgb c = colormap(hm.at(y, x));
            std::uint8_t* px = out.pixels.data() + (static_cast<std::size_t>(y) * hm.width + x) * 3;
            for (int ch = 0; ch < 3; ++ch) {
                const double s = row[x][2 - ch];
                px[ch] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * s + alpha * c[ch]));
            }
        }
    }
    return out;
}

void save_rgb_png(const RgbImage& img, const fs::path& path) {
    cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", bgr, buf)) throw DataError("PNG encoding failed for " + path.string());
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

void write_overlay(const HeatMap& hm, const fs::path& image, double alpha, const fs::path& png) {
    save_rgb_png(overlay(hm, image, alpha), png);
    write_json_file(fs::path(png.string() + ".json"), {{"source", hm.source.empty() ? image.string() : hm.source},
                                                      {"image", image.string()},
                                                      {"target_class", hm.target_class},
                                                      {"prob", hm.prob_synthetic},
                                                      {"layer", hm.target_layer},
                                                      {"alpha", alpha},
                                                      {"degenerate", hm.degenerate}});
}

}  // namespace tsg::explain
