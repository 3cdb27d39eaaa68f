#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "clva/image.hpp"
#include "clva/model.hpp"

namespace clva::infer {

/// Immutable model state shared by concurrent requests.
struct ModelSnapshot {
    model::ModelParams params;
    std::string model_id;
    std::filesystem::path source;
};

/// Loads a checkpoint into a snapshot whose model_id identifies the archive
/// bytes. Throws CheckpointError.
std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& checkpoint);

/// Number of generator forward passes (encode + decode) executed by
/// stylize() in this process.
std::uint64_t forward_pass_count();

/// Resizes `image` for the model: to `output_size` when given (which must be
/// divisible by 16), otherwise to the nearest 16-divisible size.
ImageArray prepare_content(const ImageArray& image, std::optional<Size> output_size = std::nullopt);

/// Single feed-forward pass: decode(encode_image(content).content_map,
/// encode_instruction(instruction)). No optimization, no gradient tracking.
/// `content` must already satisfy the model's size contract.
ImageArray stylize(const model::ModelParams& params, const ImageArray& content, std::string_view instruction);

}  // namespace clva::infer
