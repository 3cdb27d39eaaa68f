#include "clva/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "clva/errors.hpp"

namespace clva::train {
namespace fs = std::filesystem;

namespace {

using model::ModelParams;

std::vector<std::pair<std::string, torch::Tensor>> named_group(const ModelParams& params, bool discriminator) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& [name, t] : params.store().entries())
        if (name.starts_with("discriminator.") == discriminator) out.emplace_back(name, t);
    return out;
}

std::vector<torch::Tensor> tensors_of(const std::vector<std::pair<std::string, torch::Tensor>>& group) {
    std::vector<torch::Tensor> out;
    out.reserve(group.size());
    for (const auto& [name, t] : group) out.push_back(t);
    return out;
}

void clear_grads(const std::vector<torch::Tensor>& params) {
    for (const auto& p : params)
        if (p.grad().defined()) const_cast<torch::Tensor&>(p).mutable_grad() = torch::Tensor();
}

bool same_sizes(const std::vector<torch::Tensor>& ts) {
    for (const auto& t : ts)
        if (t.sizes() != ts.front().sizes()) return false;
    return true;
}

// The same parameters with the visual encoder cut out of the autograd graph,
// for measuring features without training the encoder through the measurement.
ModelParams with_fixed_encoder(const ModelParams& params) {
    model::ParamStore store;
    for (const auto& [name, t] : params.store().entries())
        store.add(name, name.starts_with("encoder.") ? t.detach() : t);
    return ModelParams(params.config(), params.vocabulary(), std::move(store), params.sentence_encoder());
}

// Style vectors for images that may not share a resolution.
torch::Tensor style_vectors(const ModelParams& params, const std::vector<torch::Tensor>& images) {
    if (same_sizes(images)) return model::encode_image(params, torch::stack(images)).style_vec;
    std::vector<torch::Tensor> rows;
    for (const auto& img : images) rows.push_back(model::encode_image(params, img).style_vec);
    return torch::cat(rows);
}

// D over per-sample patch stacks [k,3,h,w] with per-sample instruction embeddings.
torch::Tensor discriminate_groups(const ModelParams& params, const std::vector<torch::Tensor>& patch_groups,
                                  const torch::Tensor& instructions) {
    if (same_sizes(patch_groups)) {
        const auto k = patch_groups.front().size(0);
        auto instr = instructions.repeat_interleave(k, 0);
        return model::discriminate(params, torch::cat(patch_groups), instr);
    }
    std::vector<torch::Tensor> out;
    for (std::size_t i = 0; i < patch_groups.size(); ++i)
        out.push_back(model::discriminate(params, patch_groups[i], instructions[static_cast<std::int64_t>(i)]));
    return torch::cat(out);
}

void require_finite(std::initializer_list<std::pair<const char*, double>> values, const char* phase) {
    bool ok = true;
    for (const auto& [name, v] : values) ok = ok && std::isfinite(v);
    if (ok) return;
    std::ostringstream msg;
    msg << phase << " step aborted: non-finite loss (";
    for (const auto& [name, v] : values) msg << ' ' << name << '=' << v;
    msg << " )";
    throw NonFiniteLossError(msg.str());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr_g > 0.0) || !(lr_d > 0.0) || !(lr_crt > 0.0)) throw ArgumentError("train config: learning rates must be > 0");
    if (lva_steps_per_epoch < 0 || cr_steps_per_epoch < 0 || epochs < 0)
        throw ArgumentError("train config: step and epoch counts must be >= 0");
    if (batch_size < 1) throw ArgumentError("train config: batch_size must be >= 1");
    if (patches_per_image < 1) throw ArgumentError("train config: patches_per_image must be >= 1");
    if (!(patch_fraction > 0.0) || patch_fraction > 1.0) throw ArgumentError("train config: patch_fraction must be in (0,1]");
    if (warmup_steps < 0) throw ArgumentError("train config: warmup_steps must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr_g", c.lr_g},
                       {"lr_d", c.lr_d},
                       {"lr_crt", c.lr_crt},
                       {"lva_steps_per_epoch", c.lva_steps_per_epoch},
                       {"cr_steps_per_epoch", c.cr_steps_per_epoch},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"seed", c.seed},
                       {"patches_per_image", c.patches_per_image},
                       {"patch_fraction", c.patch_fraction},
                       {"nonsaturating", c.nonsaturating},
                       {"grad_clip", c.grad_clip},
                       {"freeze_discriminator", c.freeze_discriminator},
                       {"matching_through_encoder", c.matching_through_encoder},
                       {"distance", c.distance == loss::Distance::MeanSquared ? "mean_squared" : "sum_of_squares"},
                       {"weights",
                        {{"rec", c.weights.rec},
                         {"psd", c.weights.psd},
                         {"cm", c.weights.cm},
                         {"sm", c.weights.sm},
                         {"crt", c.weights.crt}}},
                       {"warmup", c.warmup ? nlohmann::json(*c.warmup) : nlohmann::json(nullptr)},
                       {"warmup_steps", c.warmup_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    static const std::set<std::string> known{"lr_g",          "lr_d",
                                             "lr_crt",        "lva_steps_per_epoch",
                                             "cr_steps_per_epoch", "batch_size",
                                             "epochs",        "seed",
                                             "patches_per_image", "patch_fraction",
                                             "nonsaturating", "grad_clip",
                                             "freeze_discriminator", "distance",
                                             "matching_through_encoder",
                                             "weights",       "warmup",
                                             "warmup_steps"};
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw ArgumentError("train config: unknown key '" + key + "'");
    TrainConfig d;
    c.lr_g = j.value("lr_g", d.lr_g);
    c.lr_d = j.value("lr_d", d.lr_d);
    c.lr_crt = j.value("lr_crt", d.lr_crt);
    c.lva_steps_per_epoch = j.value("lva_steps_per_epoch", d.lva_steps_per_epoch);
    c.cr_steps_per_epoch = j.value("cr_steps_per_epoch", d.cr_steps_per_epoch);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
    c.patches_per_image = j.value("patches_per_image", d.patches_per_image);
    c.patch_fraction = j.value("patch_fraction", d.patch_fraction);
    c.nonsaturating = j.value("nonsaturating", d.nonsaturating);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.freeze_discriminator = j.value("freeze_discriminator", d.freeze_discriminator);
    c.matching_through_encoder = j.value("matching_through_encoder", d.matching_through_encoder);
    const std::string distance = j.value("distance", std::string("mean_squared"));
    if (distance == "mean_squared") c.distance = loss::Distance::MeanSquared;
    else if (distance == "sum_of_squares") c.distance = loss::Distance::SumOfSquares;
    else throw ArgumentError("train config: unknown distance '" + distance + "'");
    c.weights = d.weights;
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        c.weights.rec = w.value("rec", 1.0);
        c.weights.psd = w.value("psd", 1.0);
        c.weights.cm = w.value("cm", 1.0);
        c.weights.sm = w.value("sm", 1.0);
        c.weights.crt = w.value("crt", 1.0);
    }
    c.warmup.reset();
    if (j.contains("warmup") && !j.at("warmup").is_null()) c.warmup = j.at("warmup").get<std::string>();
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
}

Trainer::Trainer(ModelParams params, TrainConfig config)
    : params_(std::move(params)),
      config_(std::move(config)),
      g_lva_(named_group(params_, false), {.lr = config_.lr_g}),
      d_(named_group(params_, true), {.lr = config_.lr_d}),
      g_cr_(named_group(params_, false), {.lr = config_.lr_crt}),
      rng_(config_.seed) {
    config_.validate();
}

Trainer Trainer::resume(const Checkpoint& checkpoint, TrainConfig config) {
    Trainer t(checkpoint.params.clone(), std::move(config));
    auto restore = [&](optim::Adam& opt, const char* group) {
        auto it = checkpoint.optimizer_state.find(group);
        if (it == checkpoint.optimizer_state.end()) throw CheckpointError(std::string("missing optimizer state ") + group);
        opt.load_state(it->second);
    };
    restore(t.g_lva_, "g_lva");
    restore(t.d_, "d");
    restore(t.g_cr_, "g_cr");
    t.rng_ = Rng::deserialize(checkpoint.rng_state);
    t.step_ = checkpoint.step;
    t.epoch_ = checkpoint.epoch;
    return t;
}

loss::LvaLossReport Trainer::lva_step(const data::LvaBatch& batch) {
    if (batch.contents.empty() || batch.contents.size() != batch.styles.size())
        throw ArgumentError("lva_step: batch must hold equally many (>= 1) contents and styles");

    const auto g_params = tensors_of(named_group(params_, false));
    const auto d_params = params_.discriminator_parameters();
    const auto& w = config_.weights;

    std::vector<torch::Tensor> content_images, style_images;
    std::vector<std::string> instructions;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        content_images.push_back(batch.contents[i].pixels);
        style_images.push_back(batch.styles[i].image);
        instructions.push_back(batch.styles[i].instruction);
    }
    auto contents = torch::stack(content_images).to(params_.dtype());

    // Generator pass.
    auto content_feat = model::encode_image(params_, contents);
    auto recon = model::decode(params_, content_feat.content_map, content_feat.style_vec);
    auto rec = loss::reconstruction_loss(recon, contents, config_.distance);

    auto instr = model::encode_instructions(params_, instructions);
    auto result = model::decode(params_, content_feat.content_map, instr);

    std::vector<torch::Tensor> fake_patches, real_patches;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto idx = static_cast<std::int64_t>(i);
        auto real_windows = data::sample_patch_windows(image_size(style_images[i]), config_.patch_fraction,
                                                       config_.patches_per_image, rng_);
        auto fake_windows = data::sample_patch_windows(image_size(content_images[i]), config_.patch_fraction,
                                                       config_.patches_per_image, rng_);
        real_patches.push_back(data::crop_windows(style_images[i].to(params_.dtype()), real_windows));
        fake_patches.push_back(data::crop_windows(result[idx], fake_windows));
    }
    const auto instr_fixed = instr.detach();
    loss::ClampFlag clamp_flag;
    auto d_fake = discriminate_groups(params_, fake_patches, instr_fixed);
    auto psd = loss::patch_style_loss(d_fake, config_.nonsaturating, &clamp_flag);

    const bool through = config_.matching_through_encoder;
    const auto fixed = through ? ModelParams() : with_fixed_encoder(params_);
    const auto& meter = through ? params_ : fixed;
    auto result_feat = model::encode_image(meter, result);
    auto style_ref = style_vectors(meter, style_images);
    auto content_ref = through ? content_feat.content_map : content_feat.content_map.detach();
    auto matching = loss::matching_losses(result_feat, content_ref, style_ref, config_.distance);

    loss::LvaLossReport report;
    report.rec = rec.item<double>();
    report.psd = psd.item<double>();
    report.cm = matching.content.item<double>();
    report.sm = matching.style.item<double>();
    report.g_total = loss::generator_total(report.rec, report.psd, report.cm, report.sm);
    require_finite({{"rec", report.rec}, {"psd", report.psd}, {"cm", report.cm}, {"sm", report.sm}}, "LVA");

    auto g_objective = loss::generator_total(w.rec * rec, w.psd * psd, w.cm * matching.content, w.sm * matching.style);
    clear_grads(g_params);
    clear_grads(d_params);
    g_objective.backward();
    clear_grads(d_params);
    if (config_.grad_clip > 0.0) optim::clip_grad_norm(g_params, config_.grad_clip);
    g_lva_.step();
    clear_grads(g_params);
    notify(UpdatePhase::GeneratorLva);

    // Discriminator pass on the same (now fixed) patches.
    std::vector<torch::Tensor> fake_fixed;
    for (const auto& p : fake_patches) fake_fixed.push_back(p.detach());
    auto d_fake_fixed = discriminate_groups(params_, fake_fixed, instr_fixed);
    auto d_real = discriminate_groups(params_, real_patches, instr_fixed);
    auto d_loss = loss::discriminator_loss(d_fake_fixed, d_real, &clamp_flag);
    report.d_loss = d_loss.item<double>();
    report.clamped = clamp_flag.clamped;
    require_finite({{"d_loss", report.d_loss}}, "LVA discriminator");

    if (!config_.freeze_discriminator) {
        clear_grads(d_params);
        (-d_loss).backward();
        if (config_.grad_clip > 0.0) optim::clip_grad_norm(d_params, config_.grad_clip);
        d_.step();
        clear_grads(d_params);
    }
    notify(UpdatePhase::DiscriminatorLva);
    ++step_;
    return report;
}

loss::CrLossReport Trainer::cr_step(const data::ContrastiveBatch& batch) {
    const auto& [c1, s1] = batch.pair_a;
    const auto& [c2, s2] = batch.pair_b;
    if (c1.pixels.sizes() != c2.pixels.sizes()) throw ArgumentError("cr_step: content images must share a size");

    const auto g_params = tensors_of(named_group(params_, false));
    const auto dtype = params_.dtype();

    const bool through = config_.matching_through_encoder;
    const auto fixed = through ? ModelParams() : with_fixed_encoder(params_);
    const auto& meter = through ? params_ : fixed;

    auto content = model::encode_image(meter, torch::stack({c1.pixels, c2.pixels}).to(dtype)).content_map;
    auto ref_styles = style_vectors(meter, {s1.image, s2.image});
    auto instr = model::encode_instructions(params_, {s1.instruction, s2.instruction});

    // Rows: C1-X1, C1-X2, C2-X1, C2-X2
    auto cross_content = torch::stack({content[0], content[0], content[1], content[1]});
    auto cross_style = torch::stack({instr[0], instr[1], instr[0], instr[1]});
    auto results = model::decode(params_, cross_content, cross_style);
    auto feats = model::encode_image(meter, results);
    auto row = [&](std::int64_t i) {
        return model::VisualFeatures{feats.content_map.narrow(0, i, 1), feats.style_vec.narrow(0, i, 1)};
    };
    loss::CrossFeatures cross{row(0), row(1), row(2), row(3)};

    auto consistent = loss::consistent_matching(cross, config_.distance);
    // The cosine weight between reference styles is a fixed coefficient here.
    auto relative = loss::relative_matching(cross, ref_styles[0].detach(), ref_styles[1].detach(), config_.distance);
    auto crt = loss::contrastive_loss(consistent.content, consistent.style, relative);

    loss::CrLossReport report;
    report.c_content = consistent.content.item<double>();
    report.c_style = consistent.style.item<double>();
    report.r_style = relative.item<double>();
    report.crt_total = loss::contrastive_loss(report.c_content, report.c_style, report.r_style);
    require_finite({{"c_content", report.c_content}, {"c_style", report.c_style}, {"r_style", report.r_style}}, "CR");

    clear_grads(g_params);
    (config_.weights.crt * crt).backward();
    if (config_.grad_clip > 0.0) optim::clip_grad_norm(g_params, config_.grad_clip);
    g_cr_.step();
    clear_grads(g_params);
    notify(UpdatePhase::GeneratorCr);
    ++step_;
    return report;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.params = params_.clone();
    c.optimizer_state["g_lva"] = g_lva_.state();
    c.optimizer_state["d"] = d_.state();
    c.optimizer_state["g_cr"] = g_cr_.state();
    c.step = step_;
    c.epoch = epoch_;
    c.rng_state = rng_.serialize();
    c.train_config = config_;
    return c;
}

std::string checkpoint_filename(std::int64_t epoch) {
    char name[64];
    std::snprintf(name, sizeof name, "ckpt_epoch_%04lld.clva", static_cast<long long>(epoch));
    return name;
}

std::vector<Checkpoint> fit(Trainer& trainer, const Corpora& corpora, const FitOptions& options) {
    const auto& cfg = trainer.config();
    if (corpora.contents.empty() || corpora.styles.empty()) throw CorpusEmptyError("fit: empty corpora");

    std::ofstream log;
    if (options.run_dir) {
        fs::create_directories(*options.run_dir);
        log.open(*options.run_dir / "train_log.jsonl", std::ios::app);
        if (!log) throw CheckpointError("cannot open training log in " + options.run_dir->string());
    }
    std::vector<Checkpoint> checkpoints;
    auto save = [&] {
        checkpoints.push_back(trainer.checkpoint());
        if (options.run_dir) save_checkpoint(*options.run_dir / checkpoint_filename(trainer.epoch()), checkpoints.back());
    };
    const auto t0 = std::chrono::steady_clock::now();
    auto emit = [&](nlohmann::json record) {
        record["step"] = trainer.step();
        record["epoch"] = trainer.epoch();
        record["wall_time"] = seconds_since(t0);
        if (log.is_open()) log << record.dump() << '\n' << std::flush;
        if (options.on_record) options.on_record(record);
    };

    if (trainer.epoch() == 0 && trainer.step() == 0) save();

    while (trainer.epoch() < cfg.epochs) {
        trainer.set_epoch(trainer.epoch() + 1);
        for (int i = 0; i < cfg.lva_steps_per_epoch; ++i) {
            auto batch = data::sample_lva_batch(corpora.contents, corpora.styles,
                                                static_cast<std::size_t>(cfg.batch_size), trainer.rng());
            nlohmann::json record = trainer.lva_step(batch);
            record["phase"] = "lva";
            emit(std::move(record));
        }
        for (int i = 0; i < cfg.cr_steps_per_epoch; ++i) {
            auto batch = data::sample_contrastive_batch(corpora.contents, corpora.styles, trainer.rng());
            nlohmann::json record = trainer.cr_step(batch);
            record["phase"] = "cr";
            emit(std::move(record));
        }
        save();
    }
    return checkpoints;
}

std::vector<WarmupTarget> load_warmup_targets(const fs::path& directory) {
    const fs::path manifest = directory / "targets.jsonl";
    std::ifstream in(manifest);
    if (!in) throw InputError("cannot open warm-up manifest " + manifest.string());
    std::vector<WarmupTarget> targets;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.contains("content") || !obj.contains("instruction") || !obj.contains("target"))
            throw InputError("malformed warm-up line in " + manifest.string());
        auto content = read_image(directory / obj["content"].get<std::string>());
        auto target = read_image(directory / obj["target"].get<std::string>());
        const Size size = snap_to_16(image_size(content));
        targets.push_back({resize_image(content, size), data::normalize_caption(obj["instruction"].get<std::string>()),
                           resize_image(target, size)});
    }
    return targets;
}

model::ModelParams warmup_pretrain(const model::ModelParams& params, const std::vector<WarmupTarget>& targets,
                                   int steps, const TrainConfig& config, std::vector<double>* losses) {
    if (targets.empty()) throw CorpusEmptyError("warmup_pretrain: empty target set");
    if (steps < 0) throw ArgumentError("warmup_pretrain: steps must be >= 0");
    auto out = params.clone();
    if (steps == 0) return out;

    auto group = named_group(out, false);
    const auto g_params = tensors_of(group);
    optim::Adam opt(group, {.lr = config.lr_g});
    Rng rng(config.seed);
    const auto batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), targets.size());
    for (int s = 0; s < steps; ++s) {
        std::vector<torch::Tensor> contents, goals;
        std::vector<std::string> instructions;
        for (std::size_t i = 0; i < batch; ++i) {
            const auto& t = targets[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(targets.size()) - 1))];
            contents.push_back(t.content);
            goals.push_back(t.target);
            instructions.push_back(t.instruction);
        }
        if (!same_sizes(contents)) {
            contents.resize(1);
            goals.resize(1);
            instructions.resize(1);
        }
        auto feat = model::encode_image(out, torch::stack(contents).to(out.dtype()));
        auto result = model::decode(out, feat.content_map, model::encode_instructions(out, instructions));
        auto loss = loss::squared_distance(result, torch::stack(goals).to(out.dtype()));
        const double value = loss.item<double>();
        require_finite({{"warmup", value}}, "warm-up");
        if (losses) losses->push_back(value);
        clear_grads(g_params);
        loss.backward();
        if (config.grad_clip > 0.0) optim::clip_grad_norm(g_params, config.grad_clip);
        opt.step();
        clear_grads(g_params);
    }
    return out;
}

}  // namespace clva::train
