#include "dldl/infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "dldl/augment.hpp"
#include "dldl/losses.hpp"

namespace dldl {

LabelDistribution predict_pmf_augmented(const Model& model, const MultispectralImage& img, int head) {
    auto variants = dihedral_variants(img);
    std::vector<const MultispectralImage*> batch;
    batch.reserve(variants.size());
    for (const auto& v : variants) batch.push_back(&v);
    auto outputs = model.forward(batch);

    LabelDistribution avg;
    avg.space = model.head_configs()[std::size_t(head)].label_space;
    avg.pmf.assign(std::size_t(avg.space.num_bins), 0.0);
    for (const auto& out : outputs)
        for (std::size_t i = 0; i < avg.pmf.size(); ++i) avg.pmf[i] += out.head_pmfs[std::size_t(head)].pmf[i];
    double sum = 0.0;
    for (double p : avg.pmf) sum += p;
    for (double& p : avg.pmf) p /= sum;
    return avg;
}

PredictionRecord predict_augmented(const Model& model, const MultispectralImage& img,
                                   const std::string& head_label, double sigma_train) {
    int head = model.head_index(head_label);
    if (head < 0) throw ConfigError("model has no head for label '" + head_label + "'");
    if (!(sigma_train > 0.0)) throw ConfigError("sigma_train must be positive");
    PredictionRecord rec;
    rec.pmf = predict_pmf_augmented(model, img, head);
    rec.ds_pred = expectation(rec.pmf);
    rec.sigma_pred = spread(rec.pmf);
    rec.confidence = rec.sigma_pred / sigma_train;
    return rec;
}

TestEvaluation summarize_evaluation(const std::vector<EvalSample>& samples) {
    if (samples.empty()) throw DataError("evaluate_test: empty index");
    struct Acc {
        std::size_t count = 0;
        double mae = 0.0;
        double mdo = 0.0;
    };
    std::map<int, Acc> per_class;
    double total_mae = 0.0, total_mdo = 0.0;
    for (const auto& s : samples) {
        auto& acc = per_class[int(std::lround(s.ds_true))];
        ++acc.count;
        acc.mae += s.abs_err;
        acc.mdo += s.overlap;
        total_mae += s.abs_err;
        total_mdo += s.overlap;
    }

    TestEvaluation eval;
    for (int cls = 0; cls <= 10; ++cls)
        if (!per_class.count(cls)) eval.omitted_classes.push_back(cls);
    double corr_mae = 0.0, corr_mdo = 0.0;
    for (const auto& [cls, acc] : per_class) {
        ClassRow row;
        row.ds_class = cls;
        row.count = acc.count;
        row.mae = acc.mae / double(acc.count);
        row.mdo = acc.mdo / double(acc.count);
        corr_mae += row.mae;
        corr_mdo += row.mdo;
        eval.rows.push_back(row);
    }
    eval.total_mae = total_mae / double(samples.size());
    eval.total_mdo = total_mdo / double(samples.size());
    eval.total_mae_corrected = corr_mae / double(eval.rows.size());
    eval.total_mdo_corrected = corr_mdo / double(eval.rows.size());
    return eval;
}

TestEvaluation evaluate_test(const Model& model, const DatasetIndex& index, ImageStore& store, bool augmented) {
    index.validate();
    if (index.rows.empty()) throw DataError("evaluate_test: empty index");
    int head = model.head_index("ds");
    if (head < 0) throw ConfigError("evaluate_test requires a ds head");
    const auto& head_cfg = model.head_configs()[std::size_t(head)];

    std::vector<EvalSample> samples;
    samples.reserve(index.rows.size());
    for (const auto& row : index.rows) {
        if (!row.ds_label) throw DataError("evaluate_test requires ds_label on every row");
        const auto& img = store.get(row.image_path);
        LabelDistribution pred = augmented ? predict_pmf_augmented(model, img, head)
                                           : model.forward_one(img).head_pmfs[std::size_t(head)];
        LabelDistribution truth = discretize_normal({*row.ds_label, head_cfg.label_sigma}, head_cfg.label_space);
        samples.push_back({*row.ds_label, std::abs(*row.ds_label - expectation(pred)), mdo({truth}, {pred})});
    }
    return summarize_evaluation(samples);
}

void save_evaluation_csv(const TestEvaluation& eval, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write evaluation file '" + path + "'");
    char buf[96];
    out << "true_ds,count,mae,mdo\n";
    for (const auto& row : eval.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%zu,%.10g,%.10g\n", row.ds_class, row.count, row.mae, row.mdo);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "total,,%.10g,%.10g\n", eval.total_mae, eval.total_mdo);
    out << buf;
    std::snprintf(buf, sizeof(buf), "total_corrected,,%.10g,%.10g\n", eval.total_mae_corrected,
                  eval.total_mdo_corrected);
    out << buf;
    if (!eval.omitted_classes.empty()) {
        out << "# omitted classes with zero rows:";
        for (int cls : eval.omitted_classes) out << ' ' << cls;
        out << '\n';
    }
}

ExportFormat parse_export_format(const std::string& name) {
    if (name == "csv") return ExportFormat::kCsv;
    if (name == "geojson") return ExportFormat::kGeoJson;
    throw ConfigError("unknown export format '" + name + "'");
}

void export_predictions(std::vector<PredictionRecord> records, ExportFormat format, const std::string& path) {
    if (records.empty()) throw DataError("export_predictions: no records");
    std::sort(records.begin(), records.end(),
              [](const PredictionRecord& a, const PredictionRecord& b) { return a.plant_id < b.plant_id; });
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions file '" + path + "'");
    if (format == ExportFormat::kCsv) {
        out << "plant_id,x,y,ds_pred,sigma_pred,confidence,model_id\n";
        char buf[256];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%s\n", r.plant_id.c_str(), r.x,
                          r.y, r.ds_pred, r.sigma_pred, r.confidence, r.model_id.c_str());
            out << buf;
        }
    } else {
        nlohmann::json fc;
        fc["type"] = "FeatureCollection";
        fc["features"] = nlohmann::json::array();
        for (const auto& r : records) {
            nlohmann::json f;
            f["type"] = "Feature";
            f["geometry"] = {{"type", "Point"}, {"coordinates", {r.x, r.y}}};
            f["properties"] = {{"plant_id", r.plant_id},   {"ds_pred", r.ds_pred},
                               {"sigma_pred", r.sigma_pred}, {"confidence", r.confidence},
                               {"model_id", r.model_id}};
            fc["features"].push_back(std::move(f));
        }
        out << fc.dump(2) << '\n';
    }
    if (!out) throw DataError("failed writing predictions file '" + path + "'");
}

std::vector<PredictionRecord> read_predictions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty predictions file '" + path + "'");
    std::vector<PredictionRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        fields.push_back(cur);
        if (fields.size() != 7) throw DataError("malformed prediction row in '" + path + "'");
        PredictionRecord r;
        r.plant_id = fields[0];
        r.x = std::stod(fields[1]);
        r.y = std::stod(fields[2]);
        r.ds_pred = std::stod(fields[3]);
        r.sigma_pred = std::stod(fields[4]);
        r.confidence = std::stod(fields[5]);
        r.model_id = fields[6];
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<PlantListEntry> load_plant_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open plant list '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty plant list '" + path + "'");
    if (line.ends_with('\r')) line.pop_back();
    if (line != "plant_id,x,y,image_path")
        throw DataError("unexpected plant list header in '" + path + "': " + line);
    std::vector<PlantListEntry> entries;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        fields.push_back(cur);
        if (fields.size() != 4)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 fields");
        PlantListEntry e;
        e.plant_id = fields[0];
        try {
            e.x = std::stod(fields[1]);
            e.y = std::stod(fields[2]);
        } catch (const std::exception& ex) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        e.image_path = fields[3];
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace dldl
