#include "clva/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "clva/errors.hpp"

namespace clva::model {
namespace {

constexpr double kLeakySlope = 0.2;
// Final decoder conv and discriminator output start near zero: mid-gray
// images and D ~ 0.5 at initialization.
constexpr double kNearZeroStd = 1e-3;

using Shape = std::vector<std::int64_t>;

enum class Init { Conv, Residual, Plain, Embedding, NearZero, Zero };

struct Entry {
    std::string name;
    Shape shape;
    Init init;
};

void add_conv(std::vector<Entry>& out, const std::string& name, std::int64_t in, std::int64_t outc, std::int64_t k,
              Init init = Init::Conv) {
    out.push_back({name + ".weight", {outc, in, k, k}, init});
    out.push_back({name + ".bias", {outc}, Init::Zero});
}

void add_linear(std::vector<Entry>& out, const std::string& name, std::int64_t in, std::int64_t outc,
                Init init = Init::Plain) {
    out.push_back({name + ".weight", {outc, in}, init});
    out.push_back({name + ".bias", {outc}, Init::Zero});
}

void add_resblock(std::vector<Entry>& out, const std::string& name, std::int64_t in, std::int64_t outc) {
    add_conv(out, name + ".conv1", in, outc, 3);
    add_conv(out, name + ".conv2", outc, outc, 3, Init::Residual);
    add_conv(out, name + ".skip", in, outc, 1, Init::Plain);
}

std::vector<Entry> layout_entries(const ModelConfig& cfg, const Vocabulary& vocab) {
    std::vector<Entry> out;
    const std::int64_t c = cfg.channels;
    const std::int64_t s = cfg.style_dim;
    const std::int64_t b = cfg.attention_bottleneck;

    add_conv(out, "encoder.stem", 3, cfg.encoder_width(0), 3);
    for (int i = 0; i < cfg.encoder_stages; ++i)
        add_resblock(out, "encoder.block" + std::to_string(i), cfg.encoder_width(i == 0 ? 0 : i - 1),
                     cfg.encoder_width(i));
    add_linear(out, "encoder.style", c, s);

    add_conv(out, "decoder.fuse", c + s, c, 1, Init::Plain);
    add_conv(out, "decoder.attn.query", c, b, 1, Init::Plain);
    add_conv(out, "decoder.attn.key", c, b, 1, Init::Plain);
    add_conv(out, "decoder.attn.value", c, b, 1, Init::Plain);
    add_conv(out, "decoder.attn.proj", b, c, 1, Init::Plain);
    for (int i = 0; i < cfg.encoder_stages; ++i)
        add_resblock(out, "decoder.block" + std::to_string(i), i == 0 ? c : cfg.decoder_width(i - 1),
                     cfg.decoder_width(i));
    add_conv(out, "decoder.out", cfg.decoder_width(cfg.encoder_stages - 1), 3, 3, Init::NearZero);

    if (cfg.text_backend == TextBackend::Builtin) {
        out.push_back({"text.embedding", {vocab.embedding_rows(), cfg.token_dim}, Init::Embedding});
        out.push_back({"text.mix.weight", {cfg.token_dim, cfg.token_dim, 3}, Init::Residual});
        out.push_back({"text.mix.bias", {cfg.token_dim}, Init::Zero});
        add_linear(out, "text.proj", cfg.token_dim, s);
    } else {
        add_linear(out, "text.proj", cfg.external_dim, s);
    }

    add_conv(out, "discriminator.stem", 3, cfg.discriminator_width(0), 3);
    for (int i = 0; i < cfg.discriminator_stages; ++i)
        add_resblock(out, "discriminator.block" + std::to_string(i), cfg.discriminator_width(i == 0 ? 0 : i - 1),
                     cfg.discriminator_width(i));
    const std::int64_t d_last = cfg.discriminator_width(std::max(cfg.discriminator_stages - 1, 0));
    add_linear(out, "discriminator.feature", d_last, s);
    add_linear(out, "discriminator.attn.query", s, b);
    add_linear(out, "discriminator.attn.key", s, b);
    add_linear(out, "discriminator.attn.value", s, b);
    add_linear(out, "discriminator.out", 3 * b, 1, Init::NearZero);
    return out;
}

double init_std(const Entry& e) {
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < e.shape.size(); ++i) fan_in *= e.shape[i];
    const double he = std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(fan_in)));
    switch (e.init) {
        case Init::Conv: return he;
        case Init::Residual: return 0.5 * he;
        case Init::Plain: return 1.0 / std::sqrt(static_cast<double>(fan_in));
        case Init::Embedding: return 1.0;
        case Init::NearZero: return kNearZeroStd;
        case Init::Zero: return 0.0;
    }
    return 0.0;
}

constexpr double kContentNormEpsilon = 1e-5;

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

torch::Tensor conv(const ParamStore& p, const std::string& name, const torch::Tensor& x, std::int64_t pad) {
    return torch::conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 1, pad);
}

torch::Tensor linear(const ParamStore& p, const std::string& name, const torch::Tensor& x) {
    return torch::linear(x, p.at(name + ".weight"), p.at(name + ".bias"));
}

torch::Tensor upsample2(const torch::Tensor& x) {
    return torch::upsample_nearest2d(x, std::vector<std::int64_t>{x.size(2) * 2, x.size(3) * 2});
}

torch::Tensor down_block(const ParamStore& p, const std::string& name, const torch::Tensor& x) {
    auto h = conv(p, name + ".conv1", lrelu(x), 1);
    h = conv(p, name + ".conv2", lrelu(h), 1);
    h = torch::avg_pool2d(h, 2);
    auto skip = conv(p, name + ".skip", torch::avg_pool2d(x, 2), 0);
    return h + skip;
}

torch::Tensor up_block(const ParamStore& p, const std::string& name, const torch::Tensor& x) {
    auto up = upsample2(x);
    auto h = conv(p, name + ".conv1", lrelu(up), 1);
    h = conv(p, name + ".conv2", lrelu(h), 1);
    return h + conv(p, name + ".skip", up, 0);
}

// Single-head self-attention over spatial positions inside a narrow channel
// bottleneck; the projection back to full width is added residually.
torch::Tensor channel_attention(const ParamStore& p, const torch::Tensor& f) {
    const auto n = f.size(0);
    const auto positions = f.size(2) * f.size(3);
    auto q = conv(p, "decoder.attn.query", f, 0).view({n, -1, positions});
    auto k = conv(p, "decoder.attn.key", f, 0).view({n, -1, positions});
    auto v = conv(p, "decoder.attn.value", f, 0).view({n, -1, positions});
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(1)));
    auto weights = torch::softmax(torch::bmm(q.transpose(1, 2), k) * scale, -1);  // [n, P, P]
    auto attended = torch::bmm(v, weights.transpose(1, 2)).view({n, -1, f.size(2), f.size(3)});
    return f + conv(p, "decoder.attn.proj", attended, 0);
}

torch::Tensor as_batch(const torch::Tensor& x, std::int64_t unbatched_dims) {
    return x.dim() == unbatched_dims ? x.unsqueeze(0) : x;
}

void fnv1a(std::uint64_t& h, const torch::Tensor& t) {
    auto c = t.detach().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (channels <= 0 || style_dim <= 0) throw ArgumentError("model config: channels and style_dim must be positive");
    if (attention_bottleneck <= 0 || attention_bottleneck > channels)
        throw ArgumentError("model config: attention_bottleneck must be in (0, channels]");
    if (encoder_stages != 4) throw ArgumentError("model config: encoder_stages must be 4 (/16 contract)");
    if (min_channels <= 0 || token_dim <= 0 || external_dim <= 0)
        throw ArgumentError("model config: widths must be positive");
    if (discriminator_stages < 0 || discriminator_stages > 6)
        throw ArgumentError("model config: discriminator_stages must be in [0, 6]");
}

int ModelConfig::encoder_width(int stage) const {
    return std::max(min_channels, channels >> (encoder_stages - 1 - stage));
}

int ModelConfig::decoder_width(int stage) const { return std::max(min_channels, channels >> stage); }

int ModelConfig::discriminator_width(int stage) const {
    return std::max(min_channels, channels >> std::max(discriminator_stages - 1 - stage, 0));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"channels", c.channels},
                       {"style_dim", c.style_dim},
                       {"attention_bottleneck", c.attention_bottleneck},
                       {"encoder_stages", c.encoder_stages},
                       {"text_backend", c.text_backend == TextBackend::Builtin ? "builtin" : "external"},
                       {"min_channels", c.min_channels},
                       {"token_dim", c.token_dim},
                       {"discriminator_stages", c.discriminator_stages},
                       {"external_dim", c.external_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.channels = j.value("channels", d.channels);
    c.style_dim = j.value("style_dim", d.style_dim);
    c.attention_bottleneck = j.value("attention_bottleneck", d.attention_bottleneck);
    c.encoder_stages = j.value("encoder_stages", d.encoder_stages);
    const std::string backend = j.value("text_backend", std::string("builtin"));
    if (backend == "builtin") c.text_backend = TextBackend::Builtin;
    else if (backend == "external") c.text_backend = TextBackend::External;
    else throw ArgumentError("model config: unknown text_backend '" + backend + "'");
    c.min_channels = j.value("min_channels", d.min_channels);
    c.token_dim = j.value("token_dim", d.token_dim);
    c.discriminator_stages = j.value("discriminator_stages", d.discriminator_stages);
    c.external_dim = j.value("external_dim", d.external_dim);
}

void ParamStore::add(std::string name, torch::Tensor value) {
    if (index_.contains(name)) throw ArgumentError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
}

const torch::Tensor& ParamStore::at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter " + std::string(name));
    return entries_[it->second].second;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<torch::Tensor> ParamStore::tensors_with_prefix(std::string_view prefix) const {
    std::vector<torch::Tensor> out;
    for (const auto& [name, t] : entries_)
        if (std::string_view(name).starts_with(prefix)) out.push_back(t);
    return out;
}

ModelParams::ModelParams(ModelConfig config, Vocabulary vocabulary, ParamStore store,
                         std::shared_ptr<const SentenceEncoder> sentence_encoder)
    : config_(std::move(config)),
      vocabulary_(std::move(vocabulary)),
      store_(std::move(store)),
      sentence_encoder_(std::move(sentence_encoder)) {
    config_.validate();
    const auto layout = parameter_layout(config_, vocabulary_);
    if (layout.size() != store_.size()) throw ArgumentError("parameter store does not match model config");
    for (const auto& [name, shape] : layout) {
        if (!store_.contains(name)) throw ArgumentError("missing parameter " + name);
        if (store_.at(name).sizes().vec() != shape) throw ArgumentError("shape mismatch for parameter " + name);
    }
}

void ModelParams::set_sentence_encoder(std::shared_ptr<const SentenceEncoder> encoder) {
    if (encoder && encoder->dim() != config_.external_dim)
        throw ArgumentError("sentence encoder width does not match external_dim");
    sentence_encoder_ = std::move(encoder);
}

std::vector<torch::Tensor> ModelParams::network_parameters(std::string_view network) const {
    return store_.tensors_with_prefix(std::string(network) + ".");
}

std::vector<torch::Tensor> ModelParams::generator_parameters() const {
    auto out = network_parameters("encoder");
    for (auto& t : network_parameters("decoder")) out.push_back(t);
    for (auto& t : network_parameters("text")) out.push_back(t);
    return out;
}

std::vector<torch::Tensor> ModelParams::discriminator_parameters() const {
    return network_parameters("discriminator");
}

ModelParams ModelParams::clone() const { return to(dtype()); }

ModelParams ModelParams::to(torch::Dtype dtype) const {
    ParamStore copy;
    for (const auto& [name, t] : store_.entries())
        copy.add(name, t.detach().to(dtype).clone().set_requires_grad(true));
    return ModelParams(config_, vocabulary_, std::move(copy), sentence_encoder_);
}

torch::Dtype ModelParams::dtype() const {
    return store_.size() == 0 ? torch::kFloat32 : store_.entries().front().second.scalar_type();
}

std::uint64_t ModelParams::hash(std::string_view network) const {
    std::uint64_t h = 1469598103934665603ULL;
    const std::string prefix = network.empty() ? std::string{} : std::string(network) + ".";
    for (const auto& [name, t] : store_.entries())
        if (name.starts_with(prefix)) fnv1a(h, t);
    return h;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_layout(const ModelConfig& config,
                                                                                const Vocabulary& vocabulary) {
    config.validate();
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
    for (auto& e : layout_entries(config, vocabulary)) out.emplace_back(std::move(e.name), std::move(e.shape));
    return out;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed, Vocabulary vocabulary,
                        std::shared_ptr<const SentenceEncoder> sentence_encoder) {
    config.validate();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    ParamStore store;
    for (const auto& e : layout_entries(config, vocabulary)) {
        const double std = init_std(e);
        torch::Tensor t = std == 0.0 ? torch::zeros(e.shape, torch::kFloat32)
                                     : torch::randn(e.shape, gen, torch::kFloat32) * std;
        store.add(e.name, t.set_requires_grad(true));
    }
    ModelParams params(config, std::move(vocabulary), std::move(store));
    params.set_sentence_encoder(std::move(sentence_encoder));
    return params;
}

VisualFeatures encode_image(const ModelParams& params, const torch::Tensor& images) {
    auto x = as_batch(images, 3);
    if (x.dim() != 4 || x.size(1) != 3) throw ArgumentError("encode_image: expected [3,H,W] or [N,3,H,W]");
    if (x.size(2) % kSpatialMultiple != 0 || x.size(3) % kSpatialMultiple != 0 || x.size(2) == 0 || x.size(3) == 0)
        throw ArgumentError("encode_image: height and width must be divisible by 16");
    const auto& p = params.store();
    x = x.to(params.dtype());
    auto h = conv(p, "encoder.stem", x, 1);
    for (int i = 0; i < params.config().encoder_stages; ++i) h = down_block(p, "encoder.block" + std::to_string(i), h);
    // Global statistics go to the style vector; the content map keeps only
    // per-channel normalized spatial structure.
    auto mean = h.mean({2, 3}, /*keepdim=*/true);
    auto std = torch::sqrt((h - mean).pow(2).mean({2, 3}, /*keepdim=*/true) + kContentNormEpsilon);
    auto content = (h - mean) / std;
    return {content, linear(p, "encoder.style", mean.flatten(1))};
}

torch::Tensor encode_instruction(const ModelParams& params, std::string_view text) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos)
        throw ArgumentError("encode_instruction: empty instruction");
    const auto& p = params.store();
    if (params.config().text_backend == TextBackend::External) {
        if (!params.sentence_encoder()) throw ArgumentError("encode_instruction: external backend not attached");
        auto rep = params.sentence_encoder()->represent(text).to(params.dtype());
        return linear(p, "text.proj", rep);
    }
    auto ids = params.vocabulary().encode(text);
    auto index = torch::tensor(ids, torch::kInt64);
    auto emb = p.at("text.embedding").index_select(0, index);  // [T, e]
    auto seq = emb.transpose(0, 1).unsqueeze(0);                // [1, e, T]
    auto mixed = torch::conv1d(seq, p.at("text.mix.weight"), p.at("text.mix.bias"), 1, 1);
    auto tokens = seq + lrelu(mixed);
    auto pooled = tokens.mean(2).squeeze(0);  // [e]
    return linear(p, "text.proj", pooled);
}

torch::Tensor encode_instructions(const ModelParams& params, const std::vector<std::string>& texts) {
    if (texts.empty()) throw ArgumentError("encode_instructions: no texts");
    std::vector<torch::Tensor> rows;
    rows.reserve(texts.size());
    for (const auto& t : texts) rows.push_back(encode_instruction(params, t));
    return torch::stack(rows);
}

torch::Tensor decode(const ModelParams& params, const torch::Tensor& content_map, const torch::Tensor& style_vec) {
    const auto& cfg = params.config();
    const bool unbatched = content_map.dim() == 3;
    auto content = as_batch(content_map, 3);
    auto style = as_batch(style_vec, 1);
    if (content.dim() != 4 || content.size(1) != cfg.channels)
        throw ArgumentError("decode: content map must have " + std::to_string(cfg.channels) + " channels");
    if (style.dim() != 2 || style.size(1) != cfg.style_dim)
        throw ArgumentError("decode: style vector must have length " + std::to_string(cfg.style_dim));
    if (style.size(0) != content.size(0)) {
        if (style.size(0) != 1) throw ArgumentError("decode: batch size mismatch");
        style = style.expand({content.size(0), cfg.style_dim});
    }
    const auto& p = params.store();
    auto tiled = style.view({style.size(0), cfg.style_dim, 1, 1}).expand(
        {style.size(0), cfg.style_dim, content.size(2), content.size(3)});
    auto fused = conv(p, "decoder.fuse", torch::cat({content, tiled.to(content.scalar_type())}, 1), 0);
    auto h = channel_attention(p, fused);
    for (int i = 0; i < cfg.encoder_stages; ++i) h = up_block(p, "decoder.block" + std::to_string(i), h);
    auto out = torch::tanh(conv(p, "decoder.out", lrelu(h), 1));
    return unbatched ? out.squeeze(0) : out;
}

torch::Tensor discriminate_logits(const ModelParams& params, const torch::Tensor& patches,
                                  const torch::Tensor& instruction) {
    const auto& cfg = params.config();
    auto x = as_batch(patches, 3);
    if (x.dim() != 4 || x.size(1) != 3) throw ArgumentError("discriminate: expected [K,3,h,w] patches");
    if (x.size(2) < cfg.min_patch_side() || x.size(3) < cfg.min_patch_side())
        throw ArgumentError("discriminate: patch smaller than " + std::to_string(cfg.min_patch_side()) + " px");
    auto instr = as_batch(instruction, 1);
    if (instr.dim() != 2 || instr.size(1) != cfg.style_dim)
        throw ArgumentError("discriminate: instruction embedding must have length " + std::to_string(cfg.style_dim));
    if (instr.size(0) != x.size(0)) {
        if (instr.size(0) != 1) throw ArgumentError("discriminate: patch/instruction count mismatch");
        instr = instr.expand({x.size(0), cfg.style_dim});
    }
    const auto& p = params.store();
    x = x.to(params.dtype());
    auto h = conv(p, "discriminator.stem", x, 1);
    for (int i = 0; i < cfg.discriminator_stages; ++i)
        h = down_block(p, "discriminator.block" + std::to_string(i), h);
    auto patch_feature = linear(p, "discriminator.feature", lrelu(h).mean({2, 3}));  // [K, s]

    // Two-token self-attention over (patch feature, instruction feature); a
    // dense layer reads the attended tokens and their query/key correlation.
    auto tokens = torch::stack({patch_feature, instr.to(patch_feature.scalar_type())}, 1);  // [K, 2, s]
    auto q = linear(p, "discriminator.attn.query", tokens);
    auto k = linear(p, "discriminator.attn.key", tokens);
    auto v = linear(p, "discriminator.attn.value", tokens);
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(2)));
    auto weights = torch::softmax(torch::bmm(q, k.transpose(1, 2)) * scale, -1);  // [K, 2, 2]
    auto attended = torch::bmm(weights, v);                                        // [K, 2, b]
    auto correlation = q.select(1, 0) * k.select(1, 1);
    auto joined = torch::cat({attended.flatten(1), correlation}, 1);
    return linear(p, "discriminator.out", joined).squeeze(1);
}

torch::Tensor discriminate(const ModelParams& params, const torch::Tensor& patches, const torch::Tensor& instruction) {
    return torch::sigmoid(discriminate_logits(params, patches, instruction));
}

}  // namespace clva::model
