#pragma once

#include <optional>
#include <string>
#include <vector>

#include "edemajoint/encoders.hpp"
#include "edemajoint/evalkit.hpp"
#include "edemajoint/objective.hpp"
#include "edemajoint/synthgen.hpp"

namespace edemajoint::trainkit {

struct TrainConfig {
    int phase1_epochs = 10;
    int phase2_epochs = 50;
    int batch_size = 4;
    double base_lr = 2e-5;
    double lr_multiplier = 25.0;  // desk-scale adjustment applied to base_lr
    double warmup_fraction = 0.1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 1;
    objective::SimKind sim_kind = objective::SimKind::dot;
    objective::SimMode sim_mode = objective::SimMode::ranking;
    double unlabeled_margin = 0.5;
    bool use_unlabeled = false;  // semi-supervised phase 1
    bool image_only = false;     // baseline: image stream + classifier, CE only
    double val_fraction = 0.2;
    encoders::ModelConfig model;

    double lr() const { return base_lr * lr_multiplier; }
    void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& config);

struct OptimizerState {
    struct Moments {
        Tensor m, v;
    };
    std::map<std::string, Moments> moments;
    std::uint64_t step = 0;
};

struct Checkpoint {
    gradnet::ParameterStore params;
    OptimizerState opt;
    std::uint64_t step = 0;
    TrainConfig config;
    std::vector<std::string> vocabulary;
};

struct BatchItem {
    const synthgen::PairedExample* example;
    const synthgen::PairedExample* impostor;
};

// One decoupled AdamW update over the parameters named in `grads`.
void adamw_step(gradnet::ParameterStore& params, const gradnet::GradientSet& grads,
                OptimizerState& state, double lr, const TrainConfig& config);

// Warmup-linear schedule: 0 -> base_lr over the warmup, then base_lr -> 0.
double lr_at_step(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps,
                  double base_lr);

// Loss graph for one mini-batch; exact reverse-mode gradients for every
// parameter reachable in the given phase.
std::pair<double, gradnet::GradientSet> loss_and_gradients(const gradnet::ParameterStore& params,
                                                           const std::vector<BatchItem>& batch,
                                                           const TrainConfig& config,
                                                           objective::Phase phase);

// Finite-difference verification of loss_and_gradients on the same batch.
double finite_diff_check(gradnet::ParameterStore& params, const std::vector<BatchItem>& batch,
                         const TrainConfig& config, objective::Phase phase, double epsilon,
                         std::uint64_t seed, int max_coords = 200);

struct EpochLog {
    int epoch = 0;  // global epoch index
    int phase = 1;
    double mean_loss = 0.0;
    std::optional<evalkit::EvalReport> validation;
};

struct TrainResult {
    Checkpoint final;
    Checkpoint best;  // by mean dichotomized validation AUC (falls back to final)
    std::vector<EpochLog> log;
};

TrainResult train(const TrainConfig& config, const synthgen::DatasetSplit& dataset);

std::vector<double> infer_image(const Checkpoint& ckpt, const Tensor& image);

// Versioned binary with a CRC-32 trailer; refuses mismatched versions and
// corrupt files.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string metrics_csv(const std::vector<EpochLog>& log);

}  // namespace edemajoint::trainkit
