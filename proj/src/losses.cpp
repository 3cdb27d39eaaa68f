#include "clva/losses.hpp"

#include "clva/errors.hpp"

namespace clva::loss {
namespace {

torch::Tensor clamp_probabilities(const torch::Tensor& d, ClampFlag* flag) {
    if (flag) {
        auto detached = d.detach();
        if ((detached < kProbabilityEpsilon).any().item<bool>() ||
            (detached > 1.0 - kProbabilityEpsilon).any().item<bool>())
            flag->clamped = true;
    }
    return d.clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.defined() || !b.defined() || a.sizes() != b.sizes())
        throw ArgumentError(std::string(what) + ": shape mismatch");
}

}  // namespace

torch::Tensor squared_distance(const torch::Tensor& a, const torch::Tensor& b, Distance distance) {
    require_same_shape(a, b, "squared_distance");
    auto sq = (a - b).pow(2);
    return distance == Distance::MeanSquared ? sq.mean() : sq.sum();
}

torch::Tensor reconstruction_loss(const torch::Tensor& recon, const torch::Tensor& original, Distance distance) {
    require_same_shape(recon, original, "reconstruction_loss");
    return squared_distance(recon, original, distance);
}

torch::Tensor patch_style_loss(const torch::Tensor& d_fake, bool nonsaturating, ClampFlag* flag) {
    if (d_fake.numel() == 0) throw ArgumentError("patch_style_loss: no patches");
    auto d = clamp_probabilities(d_fake, flag);
    return nonsaturating ? -torch::log(d).mean() : torch::log(1.0 - d).mean();
}

torch::Tensor discriminator_loss(const torch::Tensor& d_fake, const torch::Tensor& d_real, ClampFlag* flag) {
    if (d_fake.numel() == 0 || d_real.numel() == 0) throw ArgumentError("discriminator_loss: no patches");
    auto fake = clamp_probabilities(d_fake, flag);
    auto real = clamp_probabilities(d_real, flag);
    return torch::log(1.0 - fake).mean() + torch::log(real).mean();
}

MatchingLosses matching_losses(const model::VisualFeatures& result, const torch::Tensor& content_ref,
                               const torch::Tensor& style_ref, Distance distance) {
    require_same_shape(result.content_map, content_ref, "matching_losses (content)");
    require_same_shape(result.style_vec, style_ref, "matching_losses (style)");
    return {squared_distance(result.content_map, content_ref, distance),
            squared_distance(result.style_vec, style_ref, distance)};
}

ConsistentLosses consistent_matching(const CrossFeatures& f, Distance distance) {
    return {squared_distance(f.c1x1.content_map, f.c1x2.content_map, distance) +
                squared_distance(f.c2x1.content_map, f.c2x2.content_map, distance),
            squared_distance(f.c1x1.style_vec, f.c2x1.style_vec, distance) +
                squared_distance(f.c1x2.style_vec, f.c2x2.style_vec, distance)};
}

torch::Tensor relative_weight(const torch::Tensor& style_a, const torch::Tensor& style_b) {
    require_same_shape(style_a, style_b, "relative_weight");
    auto a = style_a.flatten();
    auto b = style_b.flatten();
    auto norms = a.norm() * b.norm();
    if (norms.item<double>() < 1e-12) return torch::zeros({}, a.options());
    return torch::clamp_min(torch::dot(a, b) / norms, 0.0);
}

torch::Tensor relative_matching(const CrossFeatures& f, const torch::Tensor& style_s1, const torch::Tensor& style_s2,
                                Distance distance) {
    auto raw = squared_distance(f.c1x1.style_vec, f.c1x2.style_vec, distance) +
               squared_distance(f.c2x1.style_vec, f.c2x2.style_vec, distance);
    return raw * relative_weight(style_s1, style_s2);
}

torch::Tensor contrastive_loss(const torch::Tensor& c_content, const torch::Tensor& c_style,
                               const torch::Tensor& r_style) {
    return c_content + c_style + r_style;
}

double contrastive_loss(double c_content, double c_style, double r_style) { return c_content + c_style + r_style; }

torch::Tensor generator_total(const torch::Tensor& rec, const torch::Tensor& psd, const torch::Tensor& cm,
                              const torch::Tensor& sm) {
    return rec + psd + cm + sm;
}

double generator_total(double rec, double psd, double cm, double sm) { return rec + psd + cm + sm; }

void to_json(nlohmann::json& j, const LvaLossReport& r) {
    j = nlohmann::json{{"rec", r.rec},         {"psd", r.psd},         {"cm", r.cm},          {"sm", r.sm},
                       {"g_total", r.g_total}, {"d_loss", r.d_loss}, {"clamped", r.clamped}};
}

void to_json(nlohmann::json& j, const CrLossReport& r) {
    j = nlohmann::json{{"c_content", r.c_content}, {"c_style", r.c_style}, {"r_style", r.r_style},
                       {"crt_total", r.crt_total}};
}

}  // namespace clva::loss
