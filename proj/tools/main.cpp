// Command-line front end: data generation, environmental labels, the two
// training stages, evaluation, prediction, and plot emission.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dldl/expconfig.hpp"
#include "dldl/infer.hpp"
#include "dldl/plots.hpp"
#include "dldl/synth.hpp"

namespace fs = std::filesystem;
using namespace dldl;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool reproducible = false;
};

std::string parent_dir(const std::string& path) {
    fs::path p(path);
    auto parent = p.parent_path();
    return parent.empty() ? std::string(".") : parent.string();
}

int run_synth(const SynthSpec& spec, const std::string& out_dir) {
    SynthResult res = generate(spec, out_dir);
    std::printf("wrote %zu images, index %s\n", res.index.rows.size(), res.index_path.c_str());
    return 0;
}

int run_env(const std::string& weather_path, const std::string& sowing, const std::string& from,
            const std::string& to, const std::string& out_path, const CropProfiles& crops) {
    env::WeatherSeries series = env::load_weather_csv(weather_path);
    env::Date sow = env::parse_date(sowing);
    env::ThermalConfig gdd_cfg{crops.gdd_t_base, crops.gdd_t_upper, 0.0, sow};
    env::ThermalConfig npg_cfg{crops.npg_t_base, crops.npg_t_upper, crops.npg_incubation_thermal_sum, sow};
    env::Date d0 = from.empty() ? sow : env::parse_date(from);
    env::Date d1 = to.empty() ? d0 : env::parse_date(to);
    auto table = env::env_labels_table(series, gdd_cfg, npg_cfg, d0, d1);

    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write '" + out_path + "'");
    out << "date,gdd,npg\n";
    char buf[96];
    for (const auto& row : table) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g\n", env::format_date(row.date).c_str(), row.gdd,
                      row.npg);
        out << buf;
    }
    std::printf("wrote %zu rows to %s\n", table.size(), out_path.c_str());
    return 0;
}

int run_train(const std::string& config_path, const std::string& from_checkpoint, const GlobalOpts& g,
              Stage stage) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    cfg.train.stage = stage;
    if (g.seed_set) cfg.train.seed = g.seed;
    if (cfg.index_path.empty()) throw ConfigError("config lacks paths.index");

    DatasetIndex index = load_index_csv(cfg.index_path);
    ImageStore store(parent_dir(cfg.index_path), cfg.train.normalization);

    Model model = [&]() {
        if (!from_checkpoint.empty()) {
            Model pretrained = load_checkpoint(from_checkpoint);
            std::printf("transferring backbone from %s\n", from_checkpoint.c_str());
            return transfer_backbone(pretrained, cfg.heads, derive_seed(cfg.train.seed, 0x7EAD));
        }
        return Model(cfg.vit, cfg.neck, cfg.heads, derive_seed(cfg.train.seed, 0x510D));
    }();

    fs::create_directories(cfg.output_dir);
    TrainResult result = train_stage(model, index, store, cfg.train, cfg.output_dir);
    std::string metrics_path = cfg.output_dir + "/metrics_" + stage_name(stage) + ".jsonl";
    write_metrics_jsonl(result.log, metrics_path, g.reproducible);
    std::string final_path = cfg.output_dir + "/final_" + stage_name(stage) + ".ckpt";
    save_checkpoint(model, final_path);
    std::printf("epochs run: %zu\nbest val loss %.6g at epoch %d (%s)\nbest val MDO %.6g at epoch %d (%s)\n"
                "metrics: %s\nfinal checkpoint: %s\n",
                result.log.size(), result.best_loss, result.best_loss_epoch,
                result.best_loss_checkpoint.c_str(), result.best_mdo, result.best_mdo_epoch,
                result.best_mdo_checkpoint.c_str(), metrics_path.c_str(), final_path.c_str());
    return 0;
}

int run_eval(const std::string& checkpoint, const std::string& index_path, const std::string& out_path,
             const std::string& normalization, bool no_augment) {
    Model model = load_checkpoint(checkpoint);
    DatasetIndex index = load_index_csv(index_path);
    ImageStore store(parent_dir(index_path), parse_norm_variant(normalization));
    TestEvaluation eval = evaluate_test(model, index, store, !no_augment);
    save_evaluation_csv(eval, out_path);
    std::printf("true_ds  count        mae        mdo\n");
    for (const auto& row : eval.rows)
        std::printf("%7d %6zu %10.4f %10.4f\n", row.ds_class, row.count, row.mae, row.mdo);
    std::printf("total          %10.4f %10.4f\ntotal (corr.)  %10.4f %10.4f\n", eval.total_mae,
                eval.total_mdo, eval.total_mae_corrected, eval.total_mdo_corrected);
    for (int cls : eval.omitted_classes) std::printf("class %d omitted: no rows\n", cls);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int run_predict(const std::string& checkpoint, const std::string& plants_path, const std::string& root,
                const std::string& format_name, const std::string& out_path,
                const std::string& normalization) {
    Model model = load_checkpoint(checkpoint);
    int head = model.head_index("ds");
    if (head < 0) throw ConfigError("checkpoint has no ds head");
    double sigma_train = model.head_configs()[std::size_t(head)].label_sigma;
    std::string model_id = fs::path(checkpoint).stem().string();

    auto plants = load_plant_list(plants_path);
    if (plants.empty()) throw DataError("plant list is empty");
    ImageStore store(root.empty() ? parent_dir(plants_path) : root, parse_norm_variant(normalization));

    std::vector<PredictionRecord> records;
    std::size_t failures = 0;
    for (const auto& plant : plants) {
        try {
            PredictionRecord rec = predict_augmented(model, store.get(plant.image_path), "ds", sigma_train);
            rec.plant_id = plant.plant_id;
            rec.x = plant.x;
            rec.y = plant.y;
            rec.model_id = model_id;
            records.push_back(std::move(rec));
        } catch (const DataError& e) {
            std::fprintf(stderr, "plant %s failed: %s\n", plant.plant_id.c_str(), e.what());
            ++failures;
        }
    }
    if (records.empty()) throw DataError("no plant image could be processed");
    export_predictions(std::move(records), parse_export_format(format_name), out_path);
    std::printf("wrote %zu predictions to %s (%zu failed)\n", plants.size() - failures, out_path.c_str(),
                failures);
    return failures == 0 ? 0 : 2;  // partial failure
}

int run_plot(const std::string& metrics_path, const std::string& index_path, const std::string& checkpoint,
             const std::string& image_path, const std::string& out_dir) {
    bool did_anything = false;
    std::vector<std::string> written;
    if (!metrics_path.empty()) {
        auto log = read_metrics_jsonl(metrics_path);
        if (log.empty()) throw DataError("metrics log is empty: " + metrics_path);
        auto w = plot_metrics(log, out_dir);
        written.insert(written.end(), w.begin(), w.end());
        did_anything = true;
    }
    if (!index_path.empty()) {
        auto w = plot_label_histograms(load_index_csv(index_path), out_dir);
        written.insert(written.end(), w.begin(), w.end());
        did_anything = true;
    }
    if (!checkpoint.empty() || !image_path.empty()) {
        if (checkpoint.empty() || image_path.empty())
            throw ConfigError("attention plots need both --checkpoint and --image");
        Model model = load_checkpoint(checkpoint);
        MultispectralImage raw = load_image(image_path);
        MultispectralImage norm = normalize(raw, NormVariant::kStandardizeTotal);
        auto w = plot_attention_panels(model, norm, out_dir);
        written.insert(written.end(), w.begin(), w.end());
        did_anything = true;
    }
    if (!did_anything) throw ConfigError("plot: nothing to do (pass --metrics, --index, or --checkpoint/--image)");
    for (const auto& p : written) std::printf("wrote %s\n", p.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multispectral deep label distribution learning pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "override the experiment seed")->each([&](const std::string&) {
        g.seed_set = true;
    });
    app.add_flag("--reproducible", g.reproducible, "suppress timestamps in outputs");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    SynthSpec spec;
    std::string synth_out = "synth_data";
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--datasets", spec.num_datasets, "number of datasets");
    synth->add_option("--images", spec.images_per_dataset, "images per dataset");
    synth->add_option("--size", spec.image_size, "image size in px");
    synth->add_option("--channels", spec.channels, "spectral channels (1..5)");
    synth->add_option("--balance", spec.class_balance, "class balance: uniform|paper_like");
    synth->add_option("--noise", spec.noise, "additive noise level");
    synth->add_option("--synth-seed", spec.seed, "generator seed");

    // env
    auto* envc = app.add_subcommand("env", "compute GDD/NPG table from weather");
    std::string weather_path, sowing, from_date, to_date, env_out = "env_labels.csv", env_config;
    envc->add_option("--weather", weather_path, "hourly weather CSV")->required();
    envc->add_option("--sowing", sowing, "sowing / start date YYYY-MM-DD")->required();
    envc->add_option("--from", from_date, "first date of the table (default sowing)");
    envc->add_option("--to", to_date, "last date of the table (default --from)");
    envc->add_option("--out", env_out, "output CSV path");
    envc->add_option("--config", env_config, "experiment config supplying crop profiles");

    // pretrain / finetune
    auto* pretrain = app.add_subcommand("pretrain", "pretraining stage on gdd/npg labels");
    std::string pretrain_config;
    pretrain->add_option("--config", pretrain_config, "experiment config JSON")->required();
    auto* finetune = app.add_subcommand("finetune", "finetuning stage on ds labels");
    std::string finetune_config, finetune_from;
    finetune->add_option("--config", finetune_config, "experiment config JSON")->required();
    finetune->add_option("--from", finetune_from, "pretrained checkpoint to transfer the backbone from");

    // eval
    auto* evalc = app.add_subcommand("eval", "per-class test evaluation");
    std::string eval_ckpt, eval_index, eval_out = "evaluation.csv", eval_norm = "standardize_total";
    bool eval_no_augment = false;
    evalc->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    evalc->add_option("--index", eval_index, "test index CSV")->required();
    evalc->add_option("--out", eval_out, "output CSV path");
    evalc->add_option("--normalization", eval_norm, "image normalization mode");
    evalc->add_flag("--no-augment", eval_no_augment, "disable 8-fold augmented inference");

    // predict
    auto* predict = app.add_subcommand("predict", "augmented field prediction with confidence");
    std::string pr_ckpt, pr_plants, pr_root, pr_format = "csv", pr_out = "predictions.csv",
                pr_norm = "standardize_total";
    predict->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    predict->add_option("--plants", pr_plants, "plant list CSV: plant_id,x,y,image_path")->required();
    predict->add_option("--root", pr_root, "image root directory (default: plant list directory)");
    predict->add_option("--format", pr_format, "csv | geojson");
    predict->add_option("--out", pr_out, "output path");
    predict->add_option("--normalization", pr_norm, "image normalization mode");

    // plot
    auto* plot = app.add_subcommand("plot", "emit SVG curves / histograms and attention panels");
    std::string plot_metrics_path, plot_index, plot_ckpt, plot_image, plot_out = "plots";
    plot->add_option("--metrics", plot_metrics_path, "metrics JSONL from a training run");
    plot->add_option("--index", plot_index, "dataset index for label histograms");
    plot->add_option("--checkpoint", plot_ckpt, "checkpoint for attention panels");
    plot->add_option("--image", plot_image, "image container file for attention panels");
    plot->add_option("--out", plot_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            if (g.seed_set) spec.seed = g.seed;
            return run_synth(spec, synth_out);
        }
        if (envc->parsed()) {
            CropProfiles crops;
            if (!env_config.empty()) crops = load_experiment_config(env_config).crops;
            return run_env(weather_path, sowing, from_date, to_date, env_out, crops);
        }
        if (pretrain->parsed()) return run_train(pretrain_config, "", g, Stage::kPretrain);
        if (finetune->parsed()) return run_train(finetune_config, finetune_from, g, Stage::kFinetune);
        if (evalc->parsed()) return run_eval(eval_ckpt, eval_index, eval_out, eval_norm, eval_no_augment);
        if (predict->parsed())
            return run_predict(pr_ckpt, pr_plants, pr_root, pr_format, pr_out, pr_norm);
        if (plot->parsed()) return run_plot(plot_metrics_path, plot_index, plot_ckpt, plot_image, plot_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
