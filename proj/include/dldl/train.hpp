#pragma once

#include <string>
#include <vector>

#include "dldl/augment.hpp"
#include "dldl/dataset.hpp"
#include "dldl/losses.hpp"
#include "dldl/model.hpp"
#include "dldl/optim.hpp"
#include "dldl/sampler.hpp"

namespace dldl {

enum class Stage { kPretrain, kFinetune };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage stage);

struct OptimizerSettings {
    std::string algorithm = "adamw";
    double initial_lr = 5e-4;
    double weight_decay = 0.1;
};

struct SchedulerSettings {
    std::string strategy = "cyclic_linear";
    double max_lr = 1e-3;
    long step_size = 500;
    std::string mode = "exp_range";
    double gamma = 0.9999;

    CyclicLRConfig to_cyclic(double base_lr) const;
};

struct TrainConfig {
    Stage stage = Stage::kPretrain;
    OptimizerSettings optimizer;
    SchedulerSettings scheduler;
    int batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 42;
    AugmentPolicy augment = AugmentPolicy::field_default();
    NormVariant normalization = NormVariant::kStandardizeTotal;
    bool joint_optimizers = false;  // summed-loss single optimizer instead of per-head
    SamplerFormula sampler_formula = SamplerFormula::kCellUniform;
    double validation_fraction = 0.2;  // 80:20 split
    double mdo_early_stop = 0.0;       // stop once mean validation MDO reaches this; 0 = off

    void validate() const;
};

struct HeadEpochMetrics {
    std::string label;
    LossBreakdown train_loss;
    LossBreakdown val_loss;
    double val_mdo = 0.0;
    double val_mae = 0.0;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    std::vector<HeadEpochMetrics> heads;
    double val_mdo_mean = 0.0;
    double val_mae_mean = 0.0;
    double val_total_mean = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    int best_loss_epoch = -1;
    int best_mdo_epoch = -1;
    double best_loss = 0.0;
    double best_mdo = 0.0;
    std::string best_loss_checkpoint;  // file paths, empty when out_dir was empty
    std::string best_mdo_checkpoint;

    // First epoch (1-based) whose mean validation MDO reached the threshold,
    // or 0 when never reached.
    int epochs_to_mdo(double threshold) const;
};

// Stage training over the index: 80:20 split, weighted sampling, per batch
// one backward pass and optimizer step per head (or one joint step), cyclic
// LR by global step, per-epoch validation. Best-by-loss and best-by-MDO
// checkpoints are written under out_dir when it is non-empty.
TrainResult train_stage(Model& model, const DatasetIndex& index, ImageStore& store, const TrainConfig& cfg,
                        const std::string& out_dir);

struct ValidationMetrics {
    std::vector<HeadEpochMetrics> heads;  // train_loss fields unused
    double mdo_mean = 0.0;
    double mae_mean = 0.0;
    double total_mean = 0.0;
};

// Weighted-sampling metrics with augmentation and dropout disabled.
ValidationMetrics validate(const Model& model, const DatasetIndex& index, ImageStore& store,
                           const TrainConfig& cfg);

void write_metrics_jsonl(const std::vector<EpochMetrics>& log, const std::string& path, bool reproducible);
std::vector<EpochMetrics> read_metrics_jsonl(const std::string& path);

}  // namespace dldl
