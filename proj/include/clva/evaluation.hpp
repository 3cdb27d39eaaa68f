#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "clva/image.hpp"

namespace clva::eval {

// All metric inputs are ImageArrays in the internal [-1,1] range; they are
// mapped to [0,1] before any arithmetic, and computed in double precision.

/// Mean squared pixel difference in [0,1] space.
double mse(const ImageArray& a, const ImageArray& b);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and
/// dynamic range 1, averaged over channels and all valid window positions.
/// Unscaled, i.e. in [-1,1]. Throws ArgumentError for images under 11 px.
double ssim(const ImageArray& a, const ImageArray& b);

/// Deep activation vector of an image. Implementations must be deterministic
/// and safe for concurrent read-only use.
class ActivationExtractor {
public:
    virtual ~ActivationExtractor() = default;
    /// 1-D float64 tensor of fixed length.
    virtual torch::Tensor extract(const ImageArray& image) const = 0;
    virtual std::string id() const = 0;
};

/// Fixed-seed random-weight two-layer convolutional extractor. Output is the
/// per-channel mean and standard deviation of the second layer's ReLU map.
class RandomConvExtractor final : public ActivationExtractor {
public:
    explicit RandomConvExtractor(std::uint64_t seed = 0, int width = 32);
    torch::Tensor extract(const ImageArray& image) const override;
    std::string id() const override;

private:
    std::uint64_t seed_;
    torch::Tensor w1_, w2_;
};

/// Shared image/text embedding space. Both embeddings are unit-norm and of
/// equal dimension; implementations must be safe for concurrent reads.
class JointEmbedder {
public:
    virtual ~JointEmbedder() = default;
    virtual torch::Tensor embed_image(const ImageArray& image) const = 0;
    virtual torch::Tensor embed_text(std::string_view text) const = 0;
    virtual std::string id() const = 0;
};

/// Deterministic lightweight embedder. Every token hashes to a fixed random
/// direction; a text embeds as the normalized sum of its tokens' directions.
/// An image embeds as a soft assignment of its mean color to the named
/// palette colors, mixed over the directions of the color names, so images
/// land near the captions naming their dominant color.
class PaletteHashEmbedder final : public JointEmbedder {
public:
    explicit PaletteHashEmbedder(int dim = 128, double temperature = 0.02);
    torch::Tensor embed_image(const ImageArray& image) const override;
    torch::Tensor embed_text(std::string_view text) const override;
    std::string id() const override;

    torch::Tensor token_direction(std::string_view token) const;

private:
    int dim_;
    double temperature_;
};

/// Mean over aligned pairs of the L2 distance between activations.
double fad(const std::vector<ImageArray>& set_a, const std::vector<ImageArray>& set_b,
           const ActivationExtractor& extractor);

/// L2 distance between one pair's activations (its FAD contribution times N).
double activation_distance(const ImageArray& a, const ImageArray& b, const ActivationExtractor& extractor);

/// 100 * cosine similarity between the image and instruction embeddings.
double vls(const ImageArray& result, std::string_view instruction, const JointEmbedder& embedder);

/// |VLS(semi_gt, X)| below this leaves RS undefined.
inline constexpr double kRsDenominatorFloor = 1e-6;

/// 100 * VLS(result, X) / VLS(semi_gt, X); nullopt when the denominator's
/// magnitude is below kRsDenominatorFloor (on the unscaled cosine).
std::optional<double> rs(const ImageArray& result, const ImageArray& semi_gt, std::string_view instruction,
                         const JointEmbedder& embedder);

struct PairMetrics {
    std::string pair_id;
    double mse = 0;
    double ssim = 0;  // x100
    double fad_contrib = 0;
    double vls = 0;  // x100
    std::optional<double> rs;  // x100; nullopt when undefined
};

struct SkippedPair {
    std::string pair_id;
    std::string reason;
};

struct MetricReport {
    std::vector<PairMetrics> per_pair;
    struct Aggregate {
        double mse = 0, ssim = 0, fad = 0, vls = 0;
        std::optional<double> rs;  // mean over pairs with defined RS
        std::size_t rs_pairs = 0;
    } aggregate;
    std::string extractor_id;
    std::string embedder_id;
    std::vector<SkippedPair> skipped;
};

/// Computes every metric for one aligned pair.
PairMetrics evaluate_pair(std::string pair_id, const ImageArray& result, const ImageArray& semi_gt,
                          std::string_view instruction, const ActivationExtractor& extractor,
                          const JointEmbedder& embedder);

/// Arithmetic means of the per-pair rows (RS over defined rows only).
MetricReport::Aggregate aggregate(const std::vector<PairMetrics>& rows);

/// Evaluates every pair listed in `instructions_manifest` (JSON lines of
/// {pair_id, instruction}). Images are found as `<pair_id>.<ext>` in each
/// directory; pairs lacking either image or failing to decode are listed
/// under `skipped`. A semi-GT whose size differs from its result is resized
/// to the result's size. Throws InputError when no pair can be evaluated.
MetricReport evaluate(const std::filesystem::path& results_dir, const std::filesystem::path& semi_gt_dir,
                      const std::filesystem::path& instructions_manifest, const ActivationExtractor& extractor,
                      const JointEmbedder& embedder);

void to_json(nlohmann::json& j, const MetricReport& report);
/// Header row then one row per pair: pair_id,mse,ssim,fad_contrib,vls,rs
void write_csv(std::ostream& out, const MetricReport& report);

}  // namespace clva::eval
