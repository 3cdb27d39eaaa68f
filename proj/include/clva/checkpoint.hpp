#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "clva/model.hpp"
#include "clva/optim.hpp"

namespace clva {

/// Archive layout (all integers little-endian):
///
///   bytes 0..7    magic "CLVACKPT"
///   bytes 8..11   u32 format version
///   bytes 12..19  u64 header length L
///   next L bytes  UTF-8 JSON header
///   remainder     payload: float32 arrays, little-endian, back to back
///
/// The header carries the model config, vocabulary, step/epoch counters,
/// serialized rng state, an echo of the training config and an "arrays" list
/// of {name, shape, offset} where offset counts bytes from payload start.
/// Array names are "param/<name>", "adam/<group>/m/<name>" and
/// "adam/<group>/v/<name>".
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    model::ModelParams params;
    std::map<std::string, optim::AdamState> optimizer_state;
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    std::string rng_state;
    nlohmann::json train_config = nlohmann::json::object();
};

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Throws CheckpointError for unreadable, truncated or inconsistent archives.
/// For the external text backend, `sentence_encoder` is attached if given,
/// otherwise the precomputed table recorded in the header is reopened.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::shared_ptr<const SentenceEncoder> sentence_encoder = nullptr);

/// 16 hex digits identifying the archive's exact bytes.
std::string checkpoint_model_id(const std::filesystem::path& path);

}  // namespace clva
