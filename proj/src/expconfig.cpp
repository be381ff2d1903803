#include "dldl/expconfig.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace dldl {

using nlohmann::json;

void ExperimentConfig::validate() const {
    vit.validate();
    neck.validate();
    if (heads.empty()) throw ConfigError("experiment config needs at least one head");
    for (const auto& h : heads) h.validate();
    train.validate();
}

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

AugmentPolicy augment_from_json(const json& j) {
    AugmentPolicy p;
    maybe(j, "flip_prob", p.flip_prob);
    maybe(j, "rotate", p.rotate);
    maybe(j, "blur_prob", p.blur_prob);
    if (j.contains("blur_strength")) {
        auto arr = j.at("blur_strength");
        p.blur_strength_min = arr.at(0);
        p.blur_strength_max = arr.at(1);
    }
    maybe(j, "channel_dropout_prob", p.channel_dropout_prob);
    maybe(j, "max_dropped_channels", p.max_dropped_channels);
    return p;
}

json augment_to_json(const AugmentPolicy& p) {
    return {{"flip_prob", p.flip_prob},
            {"rotate", p.rotate},
            {"blur_prob", p.blur_prob},
            {"blur_strength", {p.blur_strength_min, p.blur_strength_max}},
            {"channel_dropout_prob", p.channel_dropout_prob},
            {"max_dropped_channels", p.max_dropped_channels}};
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }

    ExperimentConfig cfg;
    try {
        const json& v = j.at("vit");
        maybe(v, "input_channels", cfg.vit.input_channels);
        maybe(v, "image_size", cfg.vit.image_size);
        maybe(v, "patch_size", cfg.vit.patch_size);
        maybe(v, "hidden_size", cfg.vit.hidden_size);
        maybe(v, "num_layers", cfg.vit.num_layers);
        maybe(v, "num_heads", cfg.vit.num_heads);
        maybe(v, "intermediate_size", cfg.vit.intermediate_size);
        maybe(v, "hidden_dropout", cfg.vit.hidden_dropout);
        maybe(v, "attention_dropout", cfg.vit.attention_dropout);

        if (j.contains("neck")) {
            const json& n = j.at("neck");
            maybe(n, "layer_size", cfg.neck.layer_size);
            maybe(n, "num_layers", cfg.neck.num_layers);
            maybe(n, "dropout", cfg.neck.dropout);
        }

        cfg.heads.clear();
        for (const json& hj : j.at("heads")) {
            HeadConfig h;
            h.label_name = hj.at("label");
            h.label_space.num_bins = hj.at("quantization_steps");
            h.label_space.lower_limit = hj.at("regression_limits").at(0);
            h.label_space.upper_limit = hj.at("regression_limits").at(1);
            h.label_sigma = hj.at("label_std");
            maybe(hj, "mlp_layers", h.mlp_layers);
            maybe(hj, "mlp_layer_size", h.mlp_layer_size);
            maybe(hj, "dropout", h.dropout);
            cfg.heads.push_back(std::move(h));
        }

        if (j.contains("train")) {
            const json& t = j.at("train");
            if (t.contains("stage")) cfg.train.stage = parse_stage(t.at("stage"));
            if (t.contains("optimizer")) {
                const json& o = t.at("optimizer");
                maybe(o, "algorithm", cfg.train.optimizer.algorithm);
                maybe(o, "initial_lr", cfg.train.optimizer.initial_lr);
                maybe(o, "weight_decay", cfg.train.optimizer.weight_decay);
            }
            if (t.contains("scheduler")) {
                const json& s = t.at("scheduler");
                maybe(s, "strategy", cfg.train.scheduler.strategy);
                maybe(s, "max_lr", cfg.train.scheduler.max_lr);
                maybe(s, "step_size", cfg.train.scheduler.step_size);
                maybe(s, "mode", cfg.train.scheduler.mode);
                maybe(s, "gamma", cfg.train.scheduler.gamma);
            }
            maybe(t, "batch_size", cfg.train.batch_size);
            maybe(t, "epochs", cfg.train.epochs);
            std::uint64_t seed = cfg.train.seed;
            maybe(t, "seed", seed);
            cfg.train.seed = seed;
            maybe(t, "joint_optimizers", cfg.train.joint_optimizers);
            maybe(t, "validation_fraction", cfg.train.validation_fraction);
            maybe(t, "mdo_early_stop", cfg.train.mdo_early_stop);
            if (t.contains("sampler")) {
                std::string s = t.at("sampler");
                if (s == "cell_uniform")
                    cfg.train.sampler_formula = SamplerFormula::kCellUniform;
                else if (s == "abundance_times_size")
                    cfg.train.sampler_formula = SamplerFormula::kAbundanceTimesSize;
                else
                    throw ConfigError("unknown sampler '" + s + "'");
            }
        }
        if (j.contains("normalization"))
            cfg.train.normalization = parse_norm_variant(j.at("normalization"));
        if (j.contains("augment")) cfg.train.augment = augment_from_json(j.at("augment"));

        if (j.contains("env_profiles")) {
            const json& e = j.at("env_profiles");
            if (e.contains("gdd")) {
                maybe(e.at("gdd"), "t_base", cfg.crops.gdd_t_base);
                maybe(e.at("gdd"), "t_upper", cfg.crops.gdd_t_upper);
            }
            if (e.contains("npg")) {
                maybe(e.at("npg"), "t_base", cfg.crops.npg_t_base);
                maybe(e.at("npg"), "t_upper", cfg.crops.npg_t_upper);
                maybe(e.at("npg"), "incubation_thermal_sum", cfg.crops.npg_incubation_thermal_sum);
            }
        }
        if (j.contains("paths")) {
            maybe(j.at("paths"), "index", cfg.index_path);
            maybe(j.at("paths"), "output_dir", cfg.output_dir);
        }
    } catch (const json::exception& e) {
        throw ConfigError("invalid config '" + path + "': " + e.what());
    }
    cfg.validate();
    return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::string& path) {
    json j;
    j["normalization"] = norm_variant_name(cfg.train.normalization);
    j["augment"] = augment_to_json(cfg.train.augment);
    j["vit"] = {{"input_channels", cfg.vit.input_channels},
                {"image_size", cfg.vit.image_size},
                {"patch_size", cfg.vit.patch_size},
                {"hidden_size", cfg.vit.hidden_size},
                {"num_layers", cfg.vit.num_layers},
                {"num_heads", cfg.vit.num_heads},
                {"intermediate_size", cfg.vit.intermediate_size},
                {"hidden_dropout", cfg.vit.hidden_dropout},
                {"attention_dropout", cfg.vit.attention_dropout}};
    j["neck"] = {{"layer_size", cfg.neck.layer_size},
                 {"num_layers", cfg.neck.num_layers},
                 {"dropout", cfg.neck.dropout}};
    j["heads"] = json::array();
    for (const auto& h : cfg.heads)
        j["heads"].push_back({{"label", h.label_name},
                              {"quantization_steps", h.label_space.num_bins},
                              {"regression_limits", {h.label_space.lower_limit, h.label_space.upper_limit}},
                              {"label_std", h.label_sigma},
                              {"mlp_layers", h.mlp_layers},
                              {"mlp_layer_size", h.mlp_layer_size},
                              {"dropout", h.dropout}});
    j["train"] = {{"stage", stage_name(cfg.train.stage)},
                  {"optimizer",
                   {{"algorithm", cfg.train.optimizer.algorithm},
                    {"initial_lr", cfg.train.optimizer.initial_lr},
                    {"weight_decay", cfg.train.optimizer.weight_decay}}},
                  {"scheduler",
                   {{"strategy", cfg.train.scheduler.strategy},
                    {"max_lr", cfg.train.scheduler.max_lr},
                    {"step_size", cfg.train.scheduler.step_size},
                    {"mode", cfg.train.scheduler.mode},
                    {"gamma", cfg.train.scheduler.gamma}}},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"seed", cfg.train.seed},
                  {"joint_optimizers", cfg.train.joint_optimizers},
                  {"validation_fraction", cfg.train.validation_fraction},
                  {"mdo_early_stop", cfg.train.mdo_early_stop},
                  {"sampler", cfg.train.sampler_formula == SamplerFormula::kCellUniform
                                  ? "cell_uniform"
                                  : "abundance_times_size"}};
    j["env_profiles"] = {{"gdd", {{"t_base", cfg.crops.gdd_t_base}, {"t_upper", cfg.crops.gdd_t_upper}}},
                         {"npg",
                          {{"t_base", cfg.crops.npg_t_base},
                           {"t_upper", cfg.crops.npg_t_upper},
                           {"incubation_thermal_sum", cfg.crops.npg_incubation_thermal_sum}}}};
    j["paths"] = {{"index", cfg.index_path}, {"output_dir", cfg.output_dir}};

    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file '" + path + "'");
    out << j.dump(2) << '\n';
}

ExperimentConfig default_pretrain_config() {
    ExperimentConfig cfg;
    cfg.vit = ViTConfig{5, 144, 12, 1024, 8, 4, 1024, 0.02, 0.02};
    cfg.neck = NeckConfig{512, 3, 0.2};
    HeadConfig gdd;
    gdd.label_name = "gdd";
    gdd.label_space = gdd_space();
    gdd.label_sigma = 100.0;
    HeadConfig npg;
    npg.label_name = "npg";
    npg.label_space = npg_space();
    npg.label_sigma = 0.3;
    cfg.heads = {gdd, npg};
    cfg.train.stage = Stage::kPretrain;
    return cfg;
}

ExperimentConfig default_finetune_config() {
    ExperimentConfig cfg = default_pretrain_config();
    HeadConfig ds;
    ds.label_name = "ds";
    ds.label_space = ds_space_finetune();
    ds.label_sigma = 0.6;
    cfg.heads = {ds};
    cfg.train.stage = Stage::kFinetune;
    return cfg;
}

}  // namespace dldl
