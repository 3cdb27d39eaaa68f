#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "clva/model.hpp"

namespace clva::loss {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// How ||a - b||_2 is reduced. MeanSquared is the default everywhere;
/// SumOfSquares exists for ablations.
enum class Distance { MeanSquared, SumOfSquares };

torch::Tensor squared_distance(const torch::Tensor& a, const torch::Tensor& b,
                               Distance distance = Distance::MeanSquared);

/// Set when any probability had to be clamped into [eps, 1 - eps].
struct ClampFlag {
    bool clamped = false;
};

/// L_rec: mean squared difference between reconstruction and original.
torch::Tensor reconstruction_loss(const torch::Tensor& recon, const torch::Tensor& original,
                                  Distance distance = Distance::MeanSquared);

/// L_psd = mean log(1 - d_fake) (minimized by the generator). With
/// `nonsaturating`, -log(d_fake) is used instead.
torch::Tensor patch_style_loss(const torch::Tensor& d_fake, bool nonsaturating = false, ClampFlag* flag = nullptr);

/// L_D = mean log(1 - d_fake) + mean log(d_real) (maximized by the discriminator).
torch::Tensor discriminator_loss(const torch::Tensor& d_fake, const torch::Tensor& d_real, ClampFlag* flag = nullptr);

struct MatchingLosses {
    torch::Tensor content;  // L_cm
    torch::Tensor style;    // L_sm
};

/// L_cm, L_sm between the re-encoded result and the content/style references.
MatchingLosses matching_losses(const model::VisualFeatures& result, const torch::Tensor& content_ref,
                               const torch::Tensor& style_ref, Distance distance = Distance::MeanSquared);

/// Features of the four cross results O_{Ci-Xj}.
struct CrossFeatures {
    model::VisualFeatures c1x1;
    model::VisualFeatures c1x2;
    model::VisualFeatures c2x1;
    model::VisualFeatures c2x2;
};

struct ConsistentLosses {
    torch::Tensor content;  // L_c-C
    torch::Tensor style;    // L_c-S
};

/// Same content image => matching content maps; same instruction => matching style vectors.
ConsistentLosses consistent_matching(const CrossFeatures& f, Distance distance = Distance::MeanSquared);

/// max(0, cos(a, b)); 0 when either vector has zero norm.
torch::Tensor relative_weight(const torch::Tensor& style_a, const torch::Tensor& style_b);

/// L_r-S: style distances across instructions, weighted by the clamped cosine
/// similarity of the two reference style images' style vectors.
torch::Tensor relative_matching(const CrossFeatures& f, const torch::Tensor& style_s1, const torch::Tensor& style_s2,
                                Distance distance = Distance::MeanSquared);

/// L_crt = L_c-C + L_c-S + L_r-S
torch::Tensor contrastive_loss(const torch::Tensor& c_content, const torch::Tensor& c_style,
                               const torch::Tensor& r_style);
double contrastive_loss(double c_content, double c_style, double r_style);

/// L_G = L_rec + L_psd + L_cm + L_sm, unweighted.
torch::Tensor generator_total(const torch::Tensor& rec, const torch::Tensor& psd, const torch::Tensor& cm,
                              const torch::Tensor& sm);
double generator_total(double rec, double psd, double cm, double sm);

struct LvaLossReport {
    double rec = 0, psd = 0, cm = 0, sm = 0, g_total = 0, d_loss = 0;
    bool clamped = false;
};

struct CrLossReport {
    double c_content = 0, c_style = 0, r_style = 0, crt_total = 0;
};

void to_json(nlohmann::json& j, const LvaLossReport& r);
void to_json(nlohmann::json& j, const CrLossReport& r);

}  // namespace clva::loss
