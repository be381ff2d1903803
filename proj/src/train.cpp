#include "dldl/train.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace dldl {

Stage parse_stage(const std::string& name) {
    if (name == "pretrain") return Stage::kPretrain;
    if (name == "finetune") return Stage::kFinetune;
    throw ConfigError("unknown stage '" + name + "'");
}

std::string stage_name(Stage stage) { return stage == Stage::kPretrain ? "pretrain" : "finetune"; }

CyclicLRConfig SchedulerSettings::to_cyclic(double base_lr) const {
    if (strategy != "cyclic_linear") throw ConfigError("unknown scheduler strategy '" + strategy + "'");
    CyclicLRConfig c;
    c.base_lr = base_lr;
    c.max_lr = max_lr;
    c.step_size = step_size;
    c.gamma = gamma;
    if (mode == "exp_range")
        c.mode = CyclicMode::kExpRange;
    else if (mode == "triangular")
        c.mode = CyclicMode::kTriangular;
    else
        throw ConfigError("unknown scheduler mode '" + mode + "'");
    return c;
}

void TrainConfig::validate() const {
    if (optimizer.algorithm != "adamw") throw ConfigError("unknown optimizer '" + optimizer.algorithm + "'");
    if (!(optimizer.initial_lr > 0.0) || !(scheduler.max_lr > 0.0)) throw ConfigError("learning rates must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation_fraction must lie in (0,1)");
    augment.validate();
}

int TrainResult::epochs_to_mdo(double threshold) const {
    for (const auto& m : log)
        if (m.val_mdo_mean >= threshold) return m.epoch;
    return 0;
}

namespace {

struct StageData {
    std::vector<const IndexRow*> train_rows;
    std::vector<const IndexRow*> val_rows;
    // truth distributions: [head][row]
    std::vector<std::vector<LabelDistribution>> train_truths;
    std::vector<std::vector<LabelDistribution>> val_truths;
    std::vector<double> train_weights;
    std::vector<double> val_weights;  // normalized to sum 1
};

LabelKind stage_primary_label(const Model& model, Stage stage) {
    if (stage == Stage::kFinetune) return LabelKind::kDs;
    return parse_label_kind(model.head_configs().front().label_name);
}

StageData prepare_stage_data(const Model& model, const DatasetIndex& index, const TrainConfig& cfg) {
    index.validate();
    if (index.rows.empty()) throw DataError("empty dataset index");

    std::vector<LabelKind> head_labels;
    for (const auto& h : model.head_configs()) head_labels.push_back(parse_label_kind(h.label_name));
    if (cfg.stage == Stage::kFinetune) {
        if (std::find(head_labels.begin(), head_labels.end(), LabelKind::kDs) == head_labels.end())
            throw ConfigError("finetune stage requires a ds head");
        std::size_t missing = 0;
        for (const auto& row : index.rows)
            if (!row.ds_label) ++missing;
        if (missing > 0)
            throw DataError("finetune requires ds_label on every row; " + std::to_string(missing) + " missing");
    }

    // seed-reproducible 80:20 split
    std::vector<std::size_t> order(index.rows.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, 0x5917));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = split_rng.uniform_index(i);
        std::swap(order[i - 1], order[j]);
    }
    std::size_t val_count = std::max<std::size_t>(1, std::size_t(std::lround(double(order.size()) * cfg.validation_fraction)));
    if (val_count >= order.size()) throw DataError("index too small for a train/validation split");

    StageData data;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const IndexRow* row = &index.rows[order[i]];
        if (i < order.size() - val_count)
            data.train_rows.push_back(row);
        else
            data.val_rows.push_back(row);
    }

    auto truths_for = [&](const std::vector<const IndexRow*>& rows) {
        std::vector<std::vector<LabelDistribution>> truths(model.head_configs().size());
        for (std::size_t h = 0; h < model.head_configs().size(); ++h) {
            const auto& head = model.head_configs()[h];
            LabelKind kind = head_labels[h];
            truths[h].reserve(rows.size());
            for (const IndexRow* row : rows)
                truths[h].push_back(
                    discretize_normal({label_value(*row, kind), head.label_sigma}, head.label_space));
        }
        return truths;
    };
    data.train_truths = truths_for(data.train_rows);
    data.val_truths = truths_for(data.val_rows);

    LabelKind primary = stage_primary_label(model, cfg.stage);
    const LabelSpace& primary_space =
        model.head_configs()[std::size_t(std::max(0, model.head_index(label_kind_name(primary))))].label_space;
    data.train_weights = build_sampler_for_rows(data.train_rows, primary_space, primary, cfg.sampler_formula);
    data.val_weights = build_sampler_for_rows(data.val_rows, primary_space, primary, cfg.sampler_formula);
    return data;
}

std::vector<double> row_to_vec(const Matrix& m, int row) {
    std::vector<double> v(std::size_t(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[std::size_t(c)] = m(row, c);
    return v;
}

// Weighted validation pass shared by train_stage and validate().
ValidationMetrics run_validation(const Model& model, const std::vector<const IndexRow*>& rows,
                                 const std::vector<std::vector<LabelDistribution>>& truths,
                                 const std::vector<double>& weights, ImageStore& store, int batch_size) {
    if (rows.empty()) throw DataError("empty validation set");
    const std::size_t num_heads = model.head_configs().size();
    ValidationMetrics out;
    out.heads.resize(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) out.heads[h].label = model.head_configs()[h].label_name;

    for (std::size_t begin = 0; begin < rows.size(); begin += std::size_t(batch_size)) {
        std::size_t end = std::min(rows.size(), begin + std::size_t(batch_size));
        std::vector<const MultispectralImage*> batch;
        batch.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) batch.push_back(&store.get(rows[i]->image_path));
        auto outputs = model.forward(batch);
        for (std::size_t i = begin; i < end; ++i) {
            double w = weights[i];
            for (std::size_t h = 0; h < num_heads; ++h) {
                const auto& pred = outputs[i - begin].head_pmfs[h];
                const auto& truth = truths[h][i];
                LossBreakdown b = total_loss(truth, pred);
                auto& hm = out.heads[h];
                hm.val_loss.label_dist += w * b.label_dist;
                hm.val_loss.expectation_value += w * b.expectation_value;
                hm.val_loss.smoothness += w * b.smoothness;
                hm.val_loss.total += w * b.total;
                hm.val_mdo += w * mdo({truth}, {pred});
                hm.val_mae += w * std::abs(expectation(truth) - expectation(pred));
            }
        }
    }
    for (std::size_t h = 0; h < num_heads; ++h) {
        out.mdo_mean += out.heads[h].val_mdo;
        out.mae_mean += out.heads[h].val_mae;
        out.total_mean += out.heads[h].val_loss.total;
    }
    out.mdo_mean /= double(num_heads);
    out.mae_mean /= double(num_heads);
    out.total_mean /= double(num_heads);
    return out;
}

void check_finite(const LossBreakdown& b, const std::string& label, int epoch, long step) {
    if (!std::isfinite(b.total))
        throw NumericError("non-finite loss for head '" + label + "' at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
}

}  // namespace

TrainResult train_stage(Model& model, const DatasetIndex& index, ImageStore& store, const TrainConfig& cfg,
                        const std::string& out_dir) {
    cfg.validate();
    StageData data = prepare_stage_data(model, index, cfg);

    const std::size_t num_heads = model.head_configs().size();
    CyclicLRConfig lr_cfg = cfg.scheduler.to_cyclic(cfg.optimizer.initial_lr);
    AdamWConfig adamw_cfg;
    adamw_cfg.lr = cfg.optimizer.initial_lr;
    adamw_cfg.weight_decay = cfg.optimizer.weight_decay;

    // Each head owns an optimizer whose parameter set is the head plus the
    // shared backbone and neck; joint mode uses one optimizer over everything.
    std::vector<AdamW> optimizers;
    if (cfg.joint_optimizers) {
        optimizers.emplace_back(model.params(), adamw_cfg);
    } else {
        for (std::size_t h = 0; h < num_heads; ++h) {
            std::vector<ParamRef> refs;
            for (const auto& p : model.params())
                if (p.owner != ParamOwner::kHead || p.head_index == int(h)) refs.push_back(p);
            optimizers.emplace_back(std::move(refs), adamw_cfg);
        }
    }

    Rng sampler_rng(derive_seed(cfg.seed, 0x5A3));
    Rng dropout_rng(derive_seed(cfg.seed, 0xD80));
    Rng augment_rng(derive_seed(cfg.seed, 0xA76));
    WeightedSampler sampler(data.train_weights);

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    TrainResult result;
    long global_step = 0;
    const long steps_per_epoch = std::max<long>(1, long(data.train_rows.size()) / cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<LossBreakdown> train_acc(num_heads);
        for (long step = 0; step < steps_per_epoch; ++step) {
            std::vector<std::size_t> picks(std::size_t(cfg.batch_size));
            for (auto& p : picks) p = sampler.draw(sampler_rng);

            std::vector<MultispectralImage> augmented;
            augmented.reserve(picks.size());
            for (std::size_t p : picks)
                augmented.push_back(
                    augment_train(store.get(data.train_rows[p]->image_path), cfg.augment, augment_rng.next_u64()));
            std::vector<const MultispectralImage*> batch;
            batch.reserve(augmented.size());
            for (const auto& img : augmented) batch.push_back(&img);

            double lr = lr_at(global_step, lr_cfg);
            const double inv_b = 1.0 / double(cfg.batch_size);

            auto head_loss_pass = [&](const Workspace& ws, std::size_t h, Matrix& d_logits) {
                const Matrix& logits = model.logits(ws, int(h));
                d_logits.resize(logits.rows(), logits.cols());
                LossBreakdown mean;
                for (int b = 0; b < int(picks.size()); ++b) {
                    auto got = total_loss_logits(row_to_vec(logits, b), data.train_truths[h][picks[std::size_t(b)]]);
                    mean.label_dist += got.value.label_dist * inv_b;
                    mean.expectation_value += got.value.expectation_value * inv_b;
                    mean.smoothness += got.value.smoothness * inv_b;
                    mean.total += got.value.total * inv_b;
                    for (Eigen::Index c = 0; c < d_logits.cols(); ++c)
                        d_logits(b, c) = got.d_logits[std::size_t(c)] * inv_b;
                }
                return mean;
            };

            if (cfg.joint_optimizers) {
                auto ws = model.forward_train(batch, dropout_rng);
                model.zero_grads();
                for (std::size_t h = 0; h < num_heads; ++h) {
                    Matrix d_logits;
                    LossBreakdown mean = head_loss_pass(*ws, h, d_logits);
                    check_finite(mean, model.head_configs()[h].label_name, epoch, global_step);
                    model.backward_head(*ws, int(h), d_logits);
                    train_acc[h].label_dist += mean.label_dist;
                    train_acc[h].expectation_value += mean.expectation_value;
                    train_acc[h].smoothness += mean.smoothness;
                    train_acc[h].total += mean.total;
                }
                optimizers[0].step(lr);
            } else {
                // heads step sequentially in declaration order, each on its
                // own forward pass over the already-updated shared weights
                for (std::size_t h = 0; h < num_heads; ++h) {
                    auto ws = model.forward_train(batch, dropout_rng);
                    Matrix d_logits;
                    LossBreakdown mean = head_loss_pass(*ws, h, d_logits);
                    check_finite(mean, model.head_configs()[h].label_name, epoch, global_step);
                    model.zero_grads();
                    model.backward_head(*ws, int(h), d_logits);
                    optimizers[h].step(lr);
                    train_acc[h].label_dist += mean.label_dist;
                    train_acc[h].expectation_value += mean.expectation_value;
                    train_acc[h].smoothness += mean.smoothness;
                    train_acc[h].total += mean.total;
                }
            }
            ++global_step;
        }

        ValidationMetrics vm =
            run_validation(model, data.val_rows, data.val_truths, data.val_weights, store, cfg.batch_size);

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr_at(global_step - 1, lr_cfg);
        em.heads.resize(num_heads);
        for (std::size_t h = 0; h < num_heads; ++h) {
            em.heads[h] = vm.heads[h];
            em.heads[h].train_loss.label_dist = train_acc[h].label_dist / double(steps_per_epoch);
            em.heads[h].train_loss.expectation_value = train_acc[h].expectation_value / double(steps_per_epoch);
            em.heads[h].train_loss.smoothness = train_acc[h].smoothness / double(steps_per_epoch);
            em.heads[h].train_loss.total = train_acc[h].total / double(steps_per_epoch);
        }
        em.val_mdo_mean = vm.mdo_mean;
        em.val_mae_mean = vm.mae_mean;
        em.val_total_mean = vm.total_mean;
        result.log.push_back(em);

        if (result.best_loss_epoch < 0 || vm.total_mean < result.best_loss) {
            result.best_loss = vm.total_mean;
            result.best_loss_epoch = epoch;
            if (!out_dir.empty()) {
                result.best_loss_checkpoint = out_dir + "/best_loss.ckpt";
                save_checkpoint(model, result.best_loss_checkpoint);
            }
        }
        if (result.best_mdo_epoch < 0 || vm.mdo_mean > result.best_mdo) {
            result.best_mdo = vm.mdo_mean;
            result.best_mdo_epoch = epoch;
            if (!out_dir.empty()) {
                result.best_mdo_checkpoint = out_dir + "/best_mdo.ckpt";
                save_checkpoint(model, result.best_mdo_checkpoint);
            }
        }
        if (cfg.mdo_early_stop > 0.0 && vm.mdo_mean >= cfg.mdo_early_stop) break;
    }
    return result;
}

ValidationMetrics validate(const Model& model, const DatasetIndex& index, ImageStore& store,
                           const TrainConfig& cfg) {
    StageData data = prepare_stage_data(model, index, cfg);
    return run_validation(model, data.val_rows, data.val_truths, data.val_weights, store, cfg.batch_size);
}

namespace {

nlohmann::json breakdown_to_json(const LossBreakdown& b) {
    return {{"ld", b.label_dist}, {"exp", b.expectation_value}, {"smooth", b.smoothness}, {"total", b.total}};
}

LossBreakdown breakdown_from_json(const nlohmann::json& j) {
    LossBreakdown b;
    b.label_dist = j.at("ld");
    b.expectation_value = j.at("exp");
    b.smoothness = j.at("smooth");
    b.total = j.at("total");
    return b;
}

}  // namespace

void write_metrics_jsonl(const std::vector<EpochMetrics>& log, const std::string& path, bool reproducible) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics log '" + path + "'");
    for (const auto& em : log) {
        nlohmann::json j;
        j["epoch"] = em.epoch;
        j["lr"] = em.lr;
        j["heads"] = nlohmann::json::object();
        for (const auto& hm : em.heads) {
            j["heads"][hm.label] = {{"train", breakdown_to_json(hm.train_loss)},
                                    {"val", breakdown_to_json(hm.val_loss)},
                                    {"val_mdo", hm.val_mdo},
                                    {"val_mae", hm.val_mae}};
        }
        j["val_mdo_mean"] = em.val_mdo_mean;
        j["val_mae_mean"] = em.val_mae_mean;
        j["val_total_mean"] = em.val_total_mean;
        if (!reproducible) j["time"] = std::time(nullptr);
        out << j.dump() << '\n';
    }
}

std::vector<EpochMetrics> read_metrics_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metrics log '" + path + "'");
    std::vector<EpochMetrics> log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        EpochMetrics em;
        em.epoch = j.at("epoch");
        em.lr = j.at("lr");
        for (auto it = j.at("heads").begin(); it != j.at("heads").end(); ++it) {
            HeadEpochMetrics hm;
            hm.label = it.key();
            hm.train_loss = breakdown_from_json(it.value().at("train"));
            hm.val_loss = breakdown_from_json(it.value().at("val"));
            hm.val_mdo = it.value().at("val_mdo");
            hm.val_mae = it.value().at("val_mae");
            em.heads.push_back(std::move(hm));
        }
        em.val_mdo_mean = j.at("val_mdo_mean");
        em.val_mae_mean = j.at("val_mae_mean");
        em.val_total_mean = j.at("val_total_mean");
        log.push_back(std::move(em));
    }
    return log;
}

}  // namespace dldl
