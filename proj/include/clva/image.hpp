#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace clva {

/// Images are float32 tensors laid out channel-first as [3, H, W] with
/// values in [-1, 1]. Batched images are [N, 3, H, W].
using ImageArray = torch::Tensor;

struct Size {
    int width = 0;
    int height = 0;

    bool operator==(const Size&) const = default;
};

/// Divisor every image dimension must satisfy (four halvings in the encoder).
inline constexpr int kSpatialMultiple = 16;

inline bool divisible_by_16(Size s) {
    return s.width > 0 && s.height > 0 && s.width % kSpatialMultiple == 0 &&
           s.height % kSpatialMultiple == 0;
}

Size image_size(const ImageArray& image);

/// Throws ArgumentError unless `image` is a [3,H,W] tensor with H, W divisible by 16.
void require_model_image(const ImageArray& image, const char* what);

/// Rounds each dimension to the nearest positive multiple of 16.
Size snap_to_16(Size s);

/// Decodes PNG/JPEG bytes. Throws InputError on failure.
ImageArray decode_image(std::span<const std::uint8_t> bytes);
/// Reads an image file. Throws InputError on failure.
ImageArray read_image(const std::filesystem::path& path);

/// Bilinear resize of a [3,H,W] image.
ImageArray resize_image(const ImageArray& image, Size target);

std::vector<std::uint8_t> encode_png(const ImageArray& image);
void write_png(const std::filesystem::path& path, const ImageArray& image);

/// [-1,1] -> [0,1]
inline torch::Tensor to_unit_range(const torch::Tensor& x) { return (x + 1.0) * 0.5; }
/// [0,1] -> [-1,1]
inline torch::Tensor from_unit_range(const torch::Tensor& x) { return x * 2.0 - 1.0; }

}  // namespace clva
