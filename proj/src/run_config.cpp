#include "clva/run_config.hpp"

#include "clva/errors.hpp"

namespace clva {
namespace fs = std::filesystem;

namespace {

void require_known_keys(const nlohmann::json& doc, const nlohmann::json& defaults, const std::string& where) {
    if (!doc.is_object()) throw ArgumentError("config: " + (where.empty() ? std::string("document") : where) +
                                              " must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!defaults.contains(key)) throw ArgumentError("config: unknown key '" + path + "'");
        if (defaults.at(key).is_object() && !value.is_null()) require_known_keys(value, defaults.at(key), path);
    }
}

Size size_from_json(const nlohmann::json& j, const char* what) {
    if (!j.is_array() || j.size() != 2) throw ArgumentError(std::string("config: ") + what + " must be [width, height]");
    return {j.at(0).get<int>(), j.at(1).get<int>()};
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

nlohmann::json parse_value(std::string_view text) {
    auto parsed = nlohmann::json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return std::string(text);
}

}  // namespace

nlohmann::json default_run_document() {
    nlohmann::json doc = train::TrainConfig{};
    doc["run_dir"] = "runs/clva";
    doc["data"] = {{"contents", ""},
                   {"styles", ""},
                   {"content_size", {512, 384}},
                   {"style_size", nullptr},
                   {"split", nullptr},
                   {"sentence_table", nullptr}};
    doc["model"] = model::ModelConfig{};
    doc["serve"] = {{"host", "127.0.0.1"}, {"port", 8080}, {"checkpoint", nullptr}};
    return doc;
}

RunConfig parse_run_config(const nlohmann::json& doc, const fs::path& base_dir) {
    const auto defaults = default_run_document();
    require_known_keys(doc, defaults, "");

    RunConfig rc;
    try {
        nlohmann::json train_part = nlohmann::json::object();
        for (const auto& [key, value] : doc.items())
            if (key != "run_dir" && key != "data" && key != "model" && key != "serve") train_part[key] = value;
        rc.train = train_part.get<train::TrainConfig>();
        rc.model = doc.value("model", nlohmann::json::object()).get<model::ModelConfig>();

        const auto data = doc.value("data", nlohmann::json::object());
        rc.data.contents = resolve(base_dir, data.value("contents", std::string{}));
        rc.data.styles = resolve(base_dir, data.value("styles", std::string{}));
        if (data.contains("content_size")) rc.data.content_size = size_from_json(data.at("content_size"), "content_size");
        if (data.contains("style_size") && !data.at("style_size").is_null())
            rc.data.style_size = size_from_json(data.at("style_size"), "style_size");
        if (data.contains("split") && !data.at("split").is_null())
            rc.data.split = resolve(base_dir, data.at("split").get<std::string>());
        if (data.contains("sentence_table") && !data.at("sentence_table").is_null())
            rc.data.sentence_table = resolve(base_dir, data.at("sentence_table").get<std::string>());

        rc.run_dir = resolve(base_dir, doc.value("run_dir", defaults.at("run_dir").get<std::string>()));
        rc.serve = doc.value("serve", defaults.at("serve"));
        if (rc.train.warmup) rc.train.warmup = resolve(base_dir, *rc.train.warmup).string();
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }

    rc.train.validate();
    rc.model.validate();
    if (!divisible_by_16(rc.data.content_size)) throw ArgumentError("config: content_size must be divisible by 16");
    if (rc.data.style_size && !divisible_by_16(*rc.data.style_size))
        throw ArgumentError("config: style_size must be divisible by 16");
    if (rc.run_dir.empty()) throw ArgumentError("config: run_dir must be set");
    return rc;
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ArgumentError("override must look like key=value: '" + std::string(assignment) + "'");
    const std::string key(assignment.substr(0, eq));
    const auto value = parse_value(assignment.substr(eq + 1));

    const auto defaults = default_run_document();
    std::string pointer;
    const nlohmann::json* node = &defaults;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty() || !node->is_object() || !node->contains(part))
            throw ArgumentError("override names unknown config key '" + key + "'");
        node = &node->at(part);
        pointer += "/" + part;
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object()) throw ArgumentError("override must name a field, not the section '" + key + "'");
    doc[nlohmann::json::json_pointer(pointer)] = value;
}

nlohmann::json to_document(const RunConfig& c) {
    nlohmann::json doc = c.train;
    doc["run_dir"] = c.run_dir.string();
    doc["data"] = {{"contents", c.data.contents.string()},
                   {"styles", c.data.styles.string()},
                   {"content_size", {c.data.content_size.width, c.data.content_size.height}},
                   {"style_size", c.data.style_size ? nlohmann::json{c.data.style_size->width, c.data.style_size->height}
                                                    : nlohmann::json(nullptr)},
                   {"split", c.data.split ? nlohmann::json(c.data.split->string()) : nlohmann::json(nullptr)},
                   {"sentence_table", c.data.sentence_table ? nlohmann::json(c.data.sentence_table->string())
                                                            : nlohmann::json(nullptr)}};
    doc["model"] = c.model;
    doc["serve"] = c.serve;
    return doc;
}

}  // namespace clva
