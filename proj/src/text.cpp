#include "clva/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "clva/data.hpp"
#include "clva/errors.hpp"

namespace clva {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], static_cast<std::int64_t>(i) + 1);
        if (!inserted) throw ArgumentError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    std::set<std::string> distinct;
    for (const auto& text : texts)
        for (auto& token : tokenize(text)) distinct.insert(std::move(token));
    return Vocabulary(std::vector<std::string>(distinct.begin(), distinct.end()));
}

std::int64_t Vocabulary::lookup(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kOovId : it->second;
}

std::vector<std::int64_t> Vocabulary::encode(std::string_view text) const {
    std::vector<std::int64_t> ids;
    for (const auto& token : tokenize(text)) ids.push_back(lookup(token));
    if (ids.empty()) ids.push_back(kOovId);
    return ids;
}

PrecomputedSentenceTable::PrecomputedSentenceTable(const std::filesystem::path& jsonl) : source_(jsonl.string()) {
    std::ifstream in(jsonl);
    if (!in) throw InputError("cannot open sentence table " + source_);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.contains("text") || !obj.contains("vector"))
            throw InputError("malformed sentence table line in " + source_);
        auto vec = obj["vector"].get<std::vector<float>>();
        if (dim_ == 0) dim_ = static_cast<int>(vec.size());
        if (vec.empty() || static_cast<int>(vec.size()) != dim_)
            throw InputError("inconsistent vector width in " + source_);
        table_[data::normalize_caption(obj["text"].get<std::string>())] = std::move(vec);
    }
    if (table_.empty()) throw InputError("empty sentence table " + source_);
}

torch::Tensor PrecomputedSentenceTable::represent(std::string_view text) const {
    auto it = table_.find(data::normalize_caption(text));
    if (it == table_.end()) throw InputError("no precomputed sentence vector for '" + std::string(text) + "'");
    return torch::tensor(it->second, torch::kFloat32);
}

}  // namespace clva
