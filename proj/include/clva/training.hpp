#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clva/checkpoint.hpp"
#include "clva/data.hpp"
#include "clva/losses.hpp"
#include "clva/model.hpp"
#include "clva/optim.hpp"
#include "clva/rng.hpp"

namespace clva::train {

/// Multipliers on each objective term. All 1 reproduces the unweighted
/// objective; other values are for ablations and small-scale stabilization.
/// Reported totals (g_total, crt_total) are always the unweighted sums.
struct LossWeights {
    double rec = 1.0, psd = 1.0, cm = 1.0, sm = 1.0, crt = 1.0;
};

struct TrainConfig {
    double lr_g = 3e-4;    // (G_E, G_D, phi) during LVA
    double lr_d = 1e-4;    // D
    double lr_crt = 3e-5;  // (G_E, G_D, phi) during CR
    int lva_steps_per_epoch = 100;
    int cr_steps_per_epoch = 50;
    int batch_size = 4;
    int epochs = 1;
    std::uint64_t seed = 0;
    int patches_per_image = 8;
    double patch_fraction = data::kDefaultPatchFraction;
    bool nonsaturating = false;
    double grad_clip = 5.0;  // global-norm clip per update; <= 0 disables
    bool freeze_discriminator = false;
    /// When false, the content/style matching and contrastive terms measure
    /// features with the visual encoder held fixed: their gradients reach the
    /// decoder and text encoder through the re-encoded results, while the
    /// encoder itself learns from L_rec only. This blocks the degenerate
    /// solution of shrinking all features toward a constant.
    bool matching_through_encoder = true;
    loss::Distance distance = loss::Distance::MeanSquared;
    LossWeights weights;
    std::optional<std::string> warmup;  // directory of precomputed stylization targets
    int warmup_steps = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Points inside a training step at which an observer is notified.
enum class UpdatePhase { GeneratorLva, DiscriminatorLva, GeneratorCr };

struct Corpora {
    std::vector<data::ContentImage> contents;
    std::vector<data::StyleRecord> styles;
};

/// Owns the model parameters, the three optimizer groups and the sampling
/// rng for one training run.
class Trainer {
public:
    Trainer(model::ModelParams params, TrainConfig config);
    /// Continues from a checkpoint: parameters, moments, counters and rng state.
    static Trainer resume(const Checkpoint& checkpoint, TrainConfig config);

    /// One LVA iteration: a generator update minimizing L_G over
    /// (G_E, G_D, phi), then a discriminator update maximizing L_D.
    /// Throws NonFiniteLossError (no parameters touched) on a non-finite loss.
    loss::LvaLossReport lva_step(const data::LvaBatch& batch);

    /// One CR iteration over the four cross results; updates (G_E, G_D, phi) only.
    loss::CrLossReport cr_step(const data::ContrastiveBatch& batch);

    Checkpoint checkpoint() const;

    const model::ModelParams& params() const { return params_; }
    const TrainConfig& config() const { return config_; }
    Rng& rng() { return rng_; }
    std::int64_t step() const { return step_; }
    std::int64_t epoch() const { return epoch_; }
    void set_epoch(std::int64_t epoch) { epoch_ = epoch; }
    /// Called right after each parameter-group update (for instrumentation).
    void set_update_observer(std::function<void(UpdatePhase)> observer) { observer_ = std::move(observer); }

private:
    model::ModelParams params_;
    TrainConfig config_;
    optim::Adam g_lva_;
    optim::Adam d_;
    optim::Adam g_cr_;
    Rng rng_;
    std::int64_t step_ = 0;
    std::int64_t epoch_ = 0;
    std::function<void(UpdatePhase)> observer_;

    void notify(UpdatePhase phase) const {
        if (observer_) observer_(phase);
    }
};

struct FitOptions {
    /// When set, checkpoints (ckpt_epoch_NNNN.clva) and train_log.jsonl are written here.
    std::optional<std::filesystem::path> run_dir;
    /// Called with every log record as it is produced.
    std::function<void(const nlohmann::json&)> on_record;
};

/// Runs epochs trainer.epoch()+1 .. config.epochs. Each epoch performs
/// lva_steps_per_epoch LVA steps, then cr_steps_per_epoch CR steps, then
/// checkpoints. A fresh trainer (epoch 0) first emits its initial checkpoint.
std::vector<Checkpoint> fit(Trainer& trainer, const Corpora& corpora, const FitOptions& options = {});

std::string checkpoint_filename(std::int64_t epoch);

struct WarmupTarget {
    ImageArray content;
    std::string instruction;
    ImageArray target;
};

/// Reads {"content", "instruction", "target"} JSON lines from
/// `directory/targets.jsonl`; image paths are relative to `directory`.
std::vector<WarmupTarget> load_warmup_targets(const std::filesystem::path& directory);

/// Supervised pretraining: minimizes the mean squared error between
/// decode(encode_image(content).content_map, encode_instruction(instruction))
/// and the target, at lr_g. Returns updated parameters; the input is not modified.
model::ModelParams warmup_pretrain(const model::ModelParams& params, const std::vector<WarmupTarget>& targets,
                                   int steps, const TrainConfig& config, std::vector<double>* losses = nullptr);

}  // namespace clva::train
