#include "clva/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "clva/errors.hpp"

namespace clva {
namespace {

// 8-bit BGR(A)/gray mat -> [3,H,W] float tensor in [-1,1]
ImageArray from_mat(const cv::Mat& decoded) {
    cv::Mat rgb;
    switch (decoded.channels()) {
        case 1: cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(decoded, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw InputError("unsupported channel count " + std::to_string(decoded.channels()));
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 127.5, -1.0);
    auto hwc = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32);
    // 255 / 127.5 - 1 can round just above 1 in float32.
    return hwc.permute({2, 0, 1}).contiguous().clone().clamp_(-1.0, 1.0);
}

cv::Mat to_mat_u8(const ImageArray& image) {
    require_model_image(image, "image");
    auto hwc = ((image.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
    cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

}  // namespace

Size image_size(const ImageArray& image) {
    return {static_cast<int>(image.size(-1)), static_cast<int>(image.size(-2))};
}

void require_model_image(const ImageArray& image, const char* what) {
    if (!image.defined() || image.dim() != 3 || image.size(0) != 3)
        throw ArgumentError(std::string(what) + ": expected a [3,H,W] tensor");
}

Size snap_to_16(Size s) {
    auto snap = [](int v) {
        int m = static_cast<int>(std::lround(static_cast<double>(v) / kSpatialMultiple)) * kSpatialMultiple;
        return std::max(m, kSpatialMultiple);
    };
    return {snap(s.width), snap(s.height)};
}

ImageArray decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw InputError("empty image payload");
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
    if (decoded.empty()) throw InputError("image payload could not be decoded");
    if (decoded.depth() != CV_8U) decoded.convertTo(decoded, CV_8U, decoded.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    return from_mat(decoded);
}

ImageArray read_image(const std::filesystem::path& path) {
    cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (decoded.empty()) throw InputError("cannot read image " + path.string());
    if (decoded.depth() != CV_8U) decoded.convertTo(decoded, CV_8U, decoded.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    return from_mat(decoded);
}

ImageArray resize_image(const ImageArray& image, Size target) {
    require_model_image(image, "resize_image");
    if (target.width <= 0 || target.height <= 0) throw ArgumentError("resize_image: non-positive target size");
    if (image_size(image) == target) return image;
    auto hwc = image.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
    cv::Mat src(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3, hwc.data_ptr());
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(target.width, target.height), 0, 0, cv::INTER_LINEAR);
    auto out = torch::from_blob(dst.data, {dst.rows, dst.cols, 3}, torch::kFloat32);
    return out.permute({2, 0, 1}).contiguous().clone().clamp(-1.0, 1.0);
}

std::vector<std::uint8_t> encode_png(const ImageArray& image) {
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(".png", to_mat_u8(image), bytes)) throw InputError("PNG encoding failed");
    return bytes;
}

void write_png(const std::filesystem::path& path, const ImageArray& image) {
    if (!cv::imwrite(path.string(), to_mat_u8(image))) throw InputError("cannot write " + path.string());
}

}  // namespace clva
