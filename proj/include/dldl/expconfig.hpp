#pragma once

#include <string>

#include "dldl/train.hpp"

namespace dldl {

struct CropProfiles {
    double gdd_t_base = 1.1;
    double gdd_t_upper = 30.0;
    double npg_t_base = 6.3;
    double npg_t_upper = 32.0;
    double npg_incubation_thermal_sum = 4963.0;
};

// One structured file mirroring the model/optimizer/scheduler tables.
struct ExperimentConfig {
    ViTConfig vit;
    NeckConfig neck;
    std::vector<HeadConfig> heads;
    TrainConfig train;
    CropProfiles crops;
    std::string index_path;
    std::string output_dir = "out";

    void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::string& path);

// Full-scale pretraining configuration (GDD + NPG heads).
ExperimentConfig default_pretrain_config();
// Finetuning configuration (DS head, 89 bins).
ExperimentConfig default_finetune_config();

}  // namespace dldl
