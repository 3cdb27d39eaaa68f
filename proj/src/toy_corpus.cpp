#include "clva/toy_corpus.hpp"

#include <cstdio>
#include <limits>

#include "clva/errors.hpp"

namespace clva::data {
namespace {

constexpr std::array<PaletteColor, 8> kPalette{{
    {"red", {0.85f, 0.15f, 0.15f}},
    {"green", {0.20f, 0.75f, 0.20f}},
    {"blue", {0.15f, 0.25f, 0.85f}},
    {"yellow", {0.85f, 0.82f, 0.15f}},
    {"cyan", {0.15f, 0.78f, 0.82f}},
    {"magenta", {0.80f, 0.18f, 0.75f}},
    {"orange", {0.88f, 0.50f, 0.12f}},
    {"purple", {0.50f, 0.20f, 0.80f}},
}};

// Light/dark swing around the palette color in patterned styles.
constexpr float kPatternSwing = 0.12f;

torch::Tensor color_tensor(const std::array<float, 3>& rgb) {
    return torch::tensor({rgb[0], rgb[1], rgb[2]}, torch::kFloat32).view({3, 1, 1});
}

torch::Tensor smoothstep(const torch::Tensor& edge_distance, double softness) {
    // 1 inside (distance < 0), 0 outside, linear ramp of width 2*softness
    return ((softness - edge_distance) / (2.0 * softness)).clamp(0.0, 1.0);
}

torch::Tensor random_color(Rng& rng, double lo, double hi) {
    return torch::tensor({static_cast<float>(rng.uniform_real(lo, hi)), static_cast<float>(rng.uniform_real(lo, hi)),
                          static_cast<float>(rng.uniform_real(lo, hi))})
        .view({3, 1, 1});
}

ImageArray render_content(Size size, Rng& rng) {
    const auto h = static_cast<double>(size.height);
    const auto w = static_cast<double>(size.width);
    auto ys = torch::arange(size.height, torch::kFloat32).view({1, size.height, 1}).expand({1, size.height, size.width});
    auto xs = torch::arange(size.width, torch::kFloat32).view({1, 1, size.width}).expand({1, size.height, size.width});

    auto top = random_color(rng, 0.25, 0.95);
    auto bottom = random_color(rng, 0.25, 0.95);
    auto t = ys / (h - 1.0);
    auto img = top * (1.0 - t) + bottom * t;

    const double horizon = rng.uniform_real(0.55, 0.8) * h;
    auto ground = smoothstep(horizon - ys, 1.5);
    img = img * (1.0 - ground) + random_color(rng, 0.05, 0.7) * ground;

    const int shapes = static_cast<int>(rng.uniform_int(2, 3));
    for (int s = 0; s < shapes; ++s) {
        const double cx = rng.uniform_real(0.15, 0.85) * w;
        const double cy = rng.uniform_real(0.2, 0.8) * h;
        const double r = rng.uniform_real(0.1, 0.22) * std::min(w, h);
        torch::Tensor mask;
        if (rng.uniform_int(0, 1) == 0) {
            auto dist = ((xs - cx).pow(2) + (ys - cy).pow(2)).sqrt() - r;
            mask = smoothstep(dist, 1.5);
        } else {
            auto dist = torch::max((xs - cx).abs() - r, (ys - cy).abs() - 0.7 * r);
            mask = smoothstep(dist, 1.5);
        }
        img = img * (1.0 - mask) + random_color(rng, 0.05, 0.95) * mask;
    }
    return from_unit_range(img.clamp(0.0, 1.0)).contiguous();
}

}  // namespace

std::span<const PaletteColor> palette() { return kPalette; }

std::string_view pattern_phrase(Pattern p) {
    switch (p) {
        case Pattern::Solid: return "solid";
        case Pattern::HorizontalStripes: return "horizontal stripes";
        case Pattern::VerticalStripes: return "vertical stripes";
        case Pattern::Checkerboard: return "checkerboard";
    }
    return "solid";
}

std::string toy_caption(const ToyStyleSpec& spec) {
    return std::string(kPalette.at(spec.color).name) + " " + std::string(pattern_phrase(spec.pattern));
}

ImageArray render_toy_style(const ToyStyleSpec& spec, Size size) {
    if (size.width <= 0 || size.height <= 0) throw ArgumentError("render_toy_style: empty size");
    if (spec.period < 1) throw ArgumentError("render_toy_style: period must be >= 1");
    auto base = color_tensor(kPalette.at(spec.color).rgb);
    auto ys = torch::arange(size.height, torch::kInt64).view({size.height, 1}).expand({size.height, size.width});
    auto xs = torch::arange(size.width, torch::kInt64).view({1, size.width}).expand({size.height, size.width});
    auto cell = [&](const torch::Tensor& coord) { return torch::div(coord, spec.period, "floor"); };
    torch::Tensor sign;  // +1 light, -1 dark
    switch (spec.pattern) {
        case Pattern::Solid: sign = torch::zeros({size.height, size.width}); break;
        case Pattern::HorizontalStripes: sign = cell(ys).remainder(2) * 2 - 1; break;
        case Pattern::VerticalStripes: sign = cell(xs).remainder(2) * 2 - 1; break;
        case Pattern::Checkerboard: sign = (cell(ys) + cell(xs)).remainder(2) * 2 - 1; break;
    }
    auto img = base + kPatternSwing * sign.to(torch::kFloat32).unsqueeze(0);
    return from_unit_range(img.expand({3, size.height, size.width})).contiguous();
}

ToyCorpus generate_toy_corpus(int n_styles, int n_contents, Size size, std::uint64_t seed) {
    if (!divisible_by_16(size)) throw ArgumentError("generate_toy_corpus: size must be divisible by 16");
    if (n_styles < 0 || n_contents < 0) throw ArgumentError("generate_toy_corpus: negative count");

    Rng rng(seed);
    ToyCorpus corpus;
    static constexpr std::array<int, 3> kPeriods{2, 4, 8};
    for (int i = 0; i < n_styles; ++i) {
        ToyStyleSpec spec;
        spec.color = static_cast<std::size_t>(i) % kPalette.size();
        spec.pattern = kPatterns[(static_cast<std::size_t>(i) / kPalette.size()) % kPatterns.size()];
        spec.period = kPeriods[static_cast<std::size_t>(rng.uniform_int(0, kPeriods.size() - 1))];
        char id[32];
        std::snprintf(id, sizeof id, "style_%04d", i);
        corpus.styles.push_back({render_toy_style(spec, size), toy_caption(spec), id});
        corpus.style_specs.push_back(spec);
    }
    for (int i = 0; i < n_contents; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "content_%04d.png", i);
        corpus.contents.push_back({render_content(size, rng), id});
    }
    return corpus;
}

ImageArray toy_semi_gt(const ImageArray& content, std::size_t color) {
    require_model_image(content, "toy_semi_gt");
    auto unit = to_unit_range(content);
    auto luma = (0.299 * unit[0] + 0.587 * unit[1] + 0.114 * unit[2]).unsqueeze(0);
    auto out = color_tensor(kPalette.at(color).rgb) * (0.4 + 1.2 * luma);
    return from_unit_range(out.clamp(0.0, 1.0)).contiguous();
}

std::size_t nearest_palette_color(const std::array<double, 3>& rgb01) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kPalette.size(); ++i) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double diff = rgb01[c] - kPalette[i].rgb[c];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

}  // namespace clva::data
