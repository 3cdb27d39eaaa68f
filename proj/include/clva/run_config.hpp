#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "clva/image.hpp"
#include "clva/model.hpp"
#include "clva/training.hpp"

namespace clva {

struct DataConfig {
    std::filesystem::path contents;        // directory of content images
    std::filesystem::path styles;          // style manifest (JSON lines)
    Size content_size = {512, 384};
    std::optional<Size> style_size;        // default: snap each style image to /16
    std::optional<std::filesystem::path> split;  // SplitManifest JSON; training uses its train ids
    std::optional<std::filesystem::path> sentence_table;  // vectors for the external text backend
};

/// Everything `clva train` reads from its config document. The document is
/// the training config's fields at top level, plus the sections
///   "run_dir": output directory,
///   "data":    {contents, styles, content_size: [W,H], style_size: [W,H], split, sentence_table},
///   "model":   model config fields,
///   "serve":   {host, port, checkpoint} (read by `clva serve`).
struct RunConfig {
    train::TrainConfig train;
    model::ModelConfig model;
    DataConfig data;
    std::filesystem::path run_dir;
    nlohmann::json serve = nullptr;
};

/// The full document with every key at its default value.
nlohmann::json default_run_document();

/// Parses and validates a run document. Unknown keys anywhere are rejected
/// with ArgumentError; relative paths resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Applies `key=value`, where key is a dotted path such as `lr_g`,
/// `weights.rec` or `model.channels`. The key must name a declared config
/// field; the value is parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

nlohmann::json to_document(const RunConfig& config);

}  // namespace clva
