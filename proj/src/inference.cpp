#include "clva/inference.hpp"

#include <atomic>

#include "clva/checkpoint.hpp"
#include "clva/errors.hpp"

namespace clva::infer {
namespace {

std::atomic<std::uint64_t> g_forward_passes{0};

}  // namespace

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& checkpoint) {
    auto ckpt = load_checkpoint(checkpoint);
    auto snapshot = std::make_shared<ModelSnapshot>();
    snapshot->params = std::move(ckpt.params);
    snapshot->model_id = checkpoint_model_id(checkpoint);
    snapshot->source = checkpoint;
    return snapshot;
}

std::uint64_t forward_pass_count() { return g_forward_passes.load(); }

ImageArray prepare_content(const ImageArray& image, std::optional<Size> output_size) {
    const Size target = output_size ? *output_size : snap_to_16(image_size(image));
    if (!divisible_by_16(target))
        throw ArgumentError("output size " + std::to_string(target.width) + "x" + std::to_string(target.height) +
                            " is not divisible by 16");
    return image_size(image) == target ? image : resize_image(image, target);
}

ImageArray stylize(const model::ModelParams& params, const ImageArray& content, std::string_view instruction) {
    require_model_image(content, "stylize content");
    torch::NoGradGuard no_grad;
    auto style = model::encode_instruction(params, instruction);
    auto features = model::encode_image(params, content.to(params.dtype()));
    auto out = model::decode(params, features.content_map, style);
    g_forward_passes.fetch_add(1);
    return out.squeeze(0).to(torch::kFloat32).contiguous();
}

}  // namespace clva::infer
