#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <torch/torch.h>

namespace clva {

/// Lower-cased alphanumeric tokens of `text`, split on everything else.
std::vector<std::string> tokenize(std::string_view text);

/// Token vocabulary for the builtin text encoder. Id 0 is reserved for
/// out-of-vocabulary tokens.
class Vocabulary {
public:
    static constexpr std::int64_t kOovId = 0;

    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    /// Collects every distinct token from `texts`, sorted.
    static Vocabulary build(const std::vector<std::string>& texts);

    std::int64_t lookup(std::string_view token) const;
    /// Token ids for `text`; a text without tokens maps to a single OOV id.
    std::vector<std::int64_t> encode(std::string_view text) const;

    /// Embedding rows needed, including the OOV row.
    std::int64_t embedding_rows() const { return static_cast<std::int64_t>(tokens_.size()) + 1; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> index_;
};

/// Fixed (non-trainable) sentence representation, e.g. a pretrained language
/// model's pooled output. Implementations must be safe for concurrent reads.
class SentenceEncoder {
public:
    virtual ~SentenceEncoder() = default;
    virtual torch::Tensor represent(std::string_view text) const = 0;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
};

/// Sentence vectors computed offline and stored as JSON lines
/// {"text": ..., "vector": [...]}. Lookups use the normalized caption.
class PrecomputedSentenceTable final : public SentenceEncoder {
public:
    explicit PrecomputedSentenceTable(const std::filesystem::path& jsonl);

    torch::Tensor represent(std::string_view text) const override;
    int dim() const override { return dim_; }
    std::string id() const override { return "precomputed:" + source_; }
    const std::string& source() const { return source_; }

private:
    std::string source_;
    int dim_ = 0;
    std::unordered_map<std::string, std::vector<float>> table_;
};

}  // namespace clva
