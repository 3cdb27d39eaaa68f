#include "clva/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "clva/errors.hpp"

namespace clva {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'L', 'V', 'A', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::vector<char>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::vector<char>& in, std::size_t offset) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        value |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return value;
}

void append_floats(std::vector<char>& payload, const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    const auto* data = c.data_ptr<float>();
    for (std::int64_t i = 0; i < c.numel(); ++i) put_le(payload, std::bit_cast<std::uint32_t>(data[i]));
}

torch::Tensor read_floats(const std::vector<char>& payload, std::size_t offset, const std::vector<std::int64_t>& shape) {
    std::int64_t count = 1;
    for (auto d : shape) {
        if (d < 0) throw CheckpointError("negative dimension in checkpoint");
        count *= d;
    }
    if (offset + static_cast<std::size_t>(count) * 4 > payload.size()) throw CheckpointError("checkpoint truncated");
    auto t = torch::empty(shape, torch::kFloat32);
    auto* data = t.data_ptr<float>();
    for (std::int64_t i = 0; i < count; ++i)
        data[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload, offset + static_cast<std::size_t>(i) * 4));
    return t;
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
    nlohmann::json arrays = nlohmann::json::array();
    std::vector<char> payload;
    auto add_array = [&](const std::string& name, const torch::Tensor& t) {
        arrays.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", payload.size()}});
        append_floats(payload, t);
    };
    for (const auto& [name, t] : checkpoint.params.store().entries()) add_array("param/" + name, t);

    nlohmann::json optimizers = nlohmann::json::object();
    for (const auto& [group, state] : checkpoint.optimizer_state) {
        optimizers[group] = {{"step", state.step}};
        for (const auto& [name, m] : state.first_moment) add_array("adam/" + group + "/m/" + name, m);
        for (const auto& [name, v] : state.second_moment) add_array("adam/" + group + "/v/" + name, v);
    }

    const auto& params = checkpoint.params;
    nlohmann::json header{{"format_version", kCheckpointFormatVersion},
                          {"model_config", params.config()},
                          {"vocabulary", params.vocabulary().tokens()},
                          {"step", checkpoint.step},
                          {"epoch", checkpoint.epoch},
                          {"rng_state", checkpoint.rng_state},
                          {"train_config", checkpoint.train_config},
                          {"optimizers", optimizers},
                          {"arrays", arrays}};
    if (params.sentence_encoder()) header["sentence_encoder"] = params.sentence_encoder()->id();
    const std::string header_text = header.dump();

    std::vector<char> bytes(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(bytes, kCheckpointFormatVersion);
    put_le<std::uint64_t>(bytes, header_text.size());
    bytes.insert(bytes.end(), header_text.begin(), header_text.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());

    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path, std::shared_ptr<const SentenceEncoder> sentence_encoder) {
    const auto bytes = read_file(path);
    constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a checkpoint archive: " + path.string());
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kCheckpointFormatVersion)
        throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(bytes, 12);
    if (header_len > bytes.size() - kPrefix) throw CheckpointError("checkpoint header truncated");

    try {
        const auto header = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + header_len);
        const std::vector<char> payload(bytes.begin() + kPrefix + static_cast<std::ptrdiff_t>(header_len), bytes.end());

        std::map<std::string, torch::Tensor> arrays;
        for (const auto& a : header.at("arrays"))
            arrays[a.at("name").get<std::string>()] =
                read_floats(payload, a.at("offset").get<std::size_t>(), a.at("shape").get<std::vector<std::int64_t>>());

        const auto config = header.at("model_config").get<model::ModelConfig>();
        Vocabulary vocabulary(header.at("vocabulary").get<std::vector<std::string>>());

        model::ParamStore store;
        for (const auto& [name, shape] : model::parameter_layout(config, vocabulary)) {
            auto it = arrays.find("param/" + name);
            if (it == arrays.end()) throw CheckpointError("checkpoint lacks parameter " + name);
            store.add(name, it->second.set_requires_grad(true));
        }

        if (!sentence_encoder && config.text_backend == model::TextBackend::External) {
            const std::string id = header.value("sentence_encoder", std::string{});
            const std::string prefix = "precomputed:";
            if (id.starts_with(prefix))
                sentence_encoder = std::make_shared<PrecomputedSentenceTable>(id.substr(prefix.size()));
        }

        Checkpoint ckpt;
        ckpt.params = model::ModelParams(config, std::move(vocabulary), std::move(store));
        ckpt.params.set_sentence_encoder(std::move(sentence_encoder));
        ckpt.step = header.at("step").get<std::int64_t>();
        ckpt.epoch = header.at("epoch").get<std::int64_t>();
        ckpt.rng_state = header.at("rng_state").get<std::string>();
        ckpt.train_config = header.value("train_config", nlohmann::json::object());

        for (const auto& [group, info] : header.at("optimizers").items()) {
            optim::AdamState state;
            state.step = info.at("step").get<std::int64_t>();
            const std::string m_prefix = "adam/" + group + "/m/";
            const std::string v_prefix = "adam/" + group + "/v/";
            for (const auto& a : header.at("arrays")) {
                const auto name = a.at("name").get<std::string>();
                if (name.starts_with(m_prefix)) state.first_moment.emplace_back(name.substr(m_prefix.size()), arrays[name]);
                if (name.starts_with(v_prefix)) state.second_moment.emplace_back(name.substr(v_prefix.size()), arrays[name]);
            }
            ckpt.optimizer_state.emplace(group, std::move(state));
        }
        return ckpt;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
}

std::string checkpoint_model_id(const fs::path& path) {
    const auto bytes = read_file(path);
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace clva
