#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "clva/image.hpp"
#include "clva/text.hpp"

namespace clva::model {

enum class TextBackend { Builtin, External };

struct ModelConfig {
    int channels = 256;             // c, content-map channels
    int style_dim = 256;            // s, style / instruction vector length
    int attention_bottleneck = 64;  // decoder self-attention width
    int encoder_stages = 4;         // downsampling residual stages (fixed at 4)
    TextBackend text_backend = TextBackend::Builtin;
    int min_channels = 16;          // floor for the narrow early/late stages
    int token_dim = 64;             // builtin text encoder token width
    int discriminator_stages = 2;   // patch encoder halvings; sets the minimum patch side
    int external_dim = 768;         // width of the external sentence representation

    void validate() const;
    int min_patch_side() const { return 1 << discriminator_stages; }
    /// Output width of encoder stage i (the last stage has `channels`).
    int encoder_width(int stage) const;
    /// Output width of decoder stage i (the first stage keeps `channels`).
    int decoder_width(int stage) const;
    int discriminator_width(int stage) const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Ordered collection of named parameter arrays. Names are dotted paths whose
/// first component is the owning network: encoder, decoder, text or
/// discriminator.
class ParamStore {
public:
    void add(std::string name, torch::Tensor value);
    const torch::Tensor& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    const std::vector<std::pair<std::string, torch::Tensor>>& entries() const { return entries_; }
    std::vector<torch::Tensor> tensors_with_prefix(std::string_view prefix) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::pair<std::string, torch::Tensor>> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

struct VisualFeatures {
    torch::Tensor content_map;  // [N, c, H/16, W/16]
    torch::Tensor style_vec;    // [N, s]
};

/// The four networks' parameters plus everything needed to run them.
class ModelParams {
public:
    ModelParams() = default;
    ModelParams(ModelConfig config, Vocabulary vocabulary, ParamStore store,
                std::shared_ptr<const SentenceEncoder> sentence_encoder = nullptr);

    const ModelConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocabulary_; }
    const ParamStore& store() const { return store_; }
    const std::shared_ptr<const SentenceEncoder>& sentence_encoder() const { return sentence_encoder_; }
    void set_sentence_encoder(std::shared_ptr<const SentenceEncoder> encoder);

    const torch::Tensor& param(std::string_view name) const { return store_.at(name); }

    /// Visual encoder, visual decoder and text encoder parameters.
    std::vector<torch::Tensor> generator_parameters() const;
    std::vector<torch::Tensor> discriminator_parameters() const;
    std::vector<torch::Tensor> network_parameters(std::string_view network) const;

    /// Deep copy (independent storage, gradients not carried over).
    ModelParams clone() const;
    /// Deep copy converted to `dtype`.
    ModelParams to(torch::Dtype dtype) const;
    torch::Dtype dtype() const;

    /// FNV-1a over the raw bytes of the named network's parameters (or all, if empty).
    std::uint64_t hash(std::string_view network = {}) const;

private:
    ModelConfig config_;
    Vocabulary vocabulary_;
    ParamStore store_;
    std::shared_ptr<const SentenceEncoder> sentence_encoder_;
};

/// Shapes of every parameter for `config`, in storage order.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_layout(const ModelConfig& config,
                                                                                const Vocabulary& vocabulary);

/// Deterministic initialization: scaled-Gaussian convolution/dense weights,
/// zero biases, near-zero final decoder and discriminator layers.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed, Vocabulary vocabulary = {},
                        std::shared_ptr<const SentenceEncoder> sentence_encoder = nullptr);

/// Accepts [3,H,W] or [N,3,H,W]; H and W must be divisible by 16. The content
/// map is instance-normalized (zero mean, unit variance per channel over
/// space); the style vector is a dense layer over the pre-normalization
/// channel means.
VisualFeatures encode_image(const ModelParams& params, const torch::Tensor& images);

/// Length-s instruction embedding. Throws ArgumentError on empty text.
torch::Tensor encode_instruction(const ModelParams& params, std::string_view text);
/// [N, s] embeddings for a batch of instructions.
torch::Tensor encode_instructions(const ModelParams& params, const std::vector<std::string>& texts);

/// Broadcast-concatenates style_vec onto content_map, fuses them with channel
/// self-attention and upsamples back to image resolution. Output in (-1,1).
/// Accepts unbatched ([c,h,w], [s]) or batched inputs.
torch::Tensor decode(const ModelParams& params, const torch::Tensor& content_map, const torch::Tensor& style_vec);

/// Pre-sigmoid discriminator scores for patches [K,3,h,w] against instruction
/// embeddings [K,s] (or a single [s] shared by all patches).
torch::Tensor discriminate_logits(const ModelParams& params, const torch::Tensor& patches,
                                  const torch::Tensor& instruction);
/// Probability in (0,1) that each patch is a real style patch matching the instruction.
torch::Tensor discriminate(const ModelParams& params, const torch::Tensor& patches, const torch::Tensor& instruction);

}  // namespace clva::model
