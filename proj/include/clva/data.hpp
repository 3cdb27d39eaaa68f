#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clva/image.hpp"
#include "clva/rng.hpp"

namespace clva::data {

/// Default content resolution (width x height).
inline constexpr Size kDefaultContentSize{512, 384};
/// Default patch side fraction: patches are (H/8, W/8).
inline constexpr double kDefaultPatchFraction = 1.0 / 8.0;

struct ContentImage {
    ImageArray pixels;  // [3,H,W], [-1,1]
    std::string source_id;
};

struct StyleRecord {
    ImageArray image;         // style image S
    std::string instruction;  // style instruction X, normalized
    std::string record_id;
};

struct SplitManifest {
    std::vector<std::string> train_style_ids;
    std::vector<std::string> test_style_ids;
    std::vector<std::string> train_content_ids;
    std::vector<std::string> test_content_ids;
    std::uint64_t seed = 0;

    bool operator==(const SplitManifest&) const = default;
};

void to_json(nlohmann::json& j, const SplitManifest& m);
void from_json(const nlohmann::json& j, SplitManifest& m);

struct LvaBatch {
    std::vector<ContentImage> contents;
    std::vector<StyleRecord> styles;

    std::size_t size() const { return contents.size(); }
};

struct ContrastiveBatch {
    std::pair<ContentImage, StyleRecord> pair_a;
    std::pair<ContentImage, StyleRecord> pair_b;
};

/// Top-left corner and extent of a crop window, in pixels.
struct PatchWindow {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    bool operator==(const PatchWindow&) const = default;
};

/// Loads every decodable raster image in `directory` (sorted by filename),
/// resized bilinearly to `target` and mapped to [-1,1]. Unreadable files are
/// skipped with a warning; throws CorpusEmptyError if nothing loads.
std::vector<ContentImage> load_content_corpus(const std::filesystem::path& directory,
                                              Size target = kDefaultContentSize);

/// Lower-case and collapse runs of whitespace; trims both ends.
std::string normalize_caption(std::string_view caption);

/// Reads a JSON-lines style manifest of {"image": <relative path>, "caption": <text>}.
/// Image paths resolve relative to the manifest's directory. Without `target`,
/// images are snapped to the nearest size divisible by 16.
std::vector<StyleRecord> load_style_corpus(const std::filesystem::path& manifest_file,
                                           std::optional<Size> target = std::nullopt);

SplitManifest make_split(std::size_t style_count, std::size_t content_count, std::size_t n_test,
                         std::uint64_t seed);
SplitManifest make_split(const std::vector<std::string>& style_ids,
                         const std::vector<std::string>& content_ids, std::size_t n_test,
                         std::uint64_t seed);

std::vector<PatchWindow> sample_patch_windows(Size image, double fraction, int k, Rng& rng);

/// k random windows of round(fraction*H) x round(fraction*W), deterministic per seed.
std::vector<ImageArray> crop_patches(const ImageArray& image, double fraction, int k,
                                     std::uint64_t seed);

/// Crops `windows` out of a [3,H,W] (or [N,3,H,W] with N==1) tensor, stacking
/// them into [k,3,h,w]. Differentiable with respect to `image`.
torch::Tensor crop_windows(const torch::Tensor& image, const std::vector<PatchWindow>& windows);

LvaBatch sample_lva_batch(const std::vector<ContentImage>& contents,
                          const std::vector<StyleRecord>& styles, std::size_t batch_size, Rng& rng);

ContrastiveBatch sample_contrastive_batch(const std::vector<ContentImage>& contents,
                                          const std::vector<StyleRecord>& styles, Rng& rng);

/// Writes a style manifest alongside already-saved images.
void write_style_manifest(const std::filesystem::path& manifest_file,
                          const std::vector<std::pair<std::string, std::string>>& image_and_caption);

}  // namespace clva::data
