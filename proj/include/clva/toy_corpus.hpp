#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clva/data.hpp"

namespace clva::data {

struct PaletteColor {
    std::string_view name;
    std::array<float, 3> rgb;  // [0,1]
};

/// Named colors used by the procedural styles. Channels stay inside
/// [0.12, 0.88] so that +/- modulation in patterned styles never clips and
/// every style's mean color equals its palette color.
std::span<const PaletteColor> palette();

enum class Pattern { Solid, HorizontalStripes, VerticalStripes, Checkerboard };

inline constexpr std::array<Pattern, 4> kPatterns{Pattern::Solid, Pattern::HorizontalStripes,
                                                  Pattern::VerticalStripes, Pattern::Checkerboard};

std::string_view pattern_phrase(Pattern p);

struct ToyStyleSpec {
    std::size_t color = 0;  // index into palette()
    Pattern pattern = Pattern::Solid;
    int period = 8;  // stripe / checker cell size in px
};

std::string toy_caption(const ToyStyleSpec& spec);

/// Renders a [3,H,W] texture in [-1,1].
ImageArray render_toy_style(const ToyStyleSpec& spec, Size size);

struct ToyCorpus {
    std::vector<ContentImage> contents;
    std::vector<StyleRecord> styles;
    std::vector<ToyStyleSpec> style_specs;  // parallel to styles
};

/// Style i uses palette color i % |palette| and pattern (i / |palette|) % 4,
/// so the first 32 styles enumerate every color/pattern combination.
/// Contents are soft-edged shapes over a gradient sky and a ground band.
ToyCorpus generate_toy_corpus(int n_styles, int n_contents, Size size, std::uint64_t seed);

/// Procedural stand-in for an image-conditioned stylization: the content's
/// luminance modulates the palette color. Used as toy semi-ground-truth.
ImageArray toy_semi_gt(const ImageArray& content, std::size_t color);

/// Index of the palette color nearest (L2, [0,1] RGB) to `rgb01`.
std::size_t nearest_palette_color(const std::array<double, 3>& rgb01);

}  // namespace clva::data
