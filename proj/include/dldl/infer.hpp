#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dldl/dataset.hpp"
#include "dldl/model.hpp"

namespace dldl {

struct PredictionRecord {
    std::string plant_id;
    double x = 0.0;
    double y = 0.0;
    LabelDistribution pmf;
    double ds_pred = 0.0;
    double sigma_pred = 0.0;
    double confidence = 0.0;  // sigma_pred / sigma_train
    std::string model_id;
};

// Forward on the 8 dihedral variants, average the pmfs and renormalize.
// sigma_train comes from the head's training label std.
PredictionRecord predict_augmented(const Model& model, const MultispectralImage& img,
                                   const std::string& head_label, double sigma_train);

// Averaged pmf over the dihedral variants of one head (helper for evaluation).
LabelDistribution predict_pmf_augmented(const Model& model, const MultispectralImage& img, int head);

struct ClassRow {
    int ds_class = 0;
    std::size_t count = 0;
    double mae = 0.0;
    double mdo = 0.0;
};

struct TestEvaluation {
    std::vector<ClassRow> rows;       // present classes only, ascending
    std::vector<int> omitted_classes;  // 0..10 classes with zero rows
    double total_mae = 0.0;            // plain mean over all rows
    double total_mdo = 0.0;
    double total_mae_corrected = 0.0;  // mean of per-class means
    double total_mdo_corrected = 0.0;
};

struct EvalSample {
    double ds_true = 0.0;
    double abs_err = 0.0;
    double overlap = 0.0;
};

// Grouping by rounded true DS with plain and abundance-corrected totals.
TestEvaluation summarize_evaluation(const std::vector<EvalSample>& samples);

// Per-class table grouped by rounded true DS. Uses 8-fold augmented
// prediction when `augmented` is set.
TestEvaluation evaluate_test(const Model& model, const DatasetIndex& index, ImageStore& store,
                             bool augmented = true);

void save_evaluation_csv(const TestEvaluation& eval, const std::string& path);

enum class ExportFormat { kCsv, kGeoJson };

ExportFormat parse_export_format(const std::string& name);

// CSV: plant_id,x,y,ds_pred,sigma_pred,confidence,model_id
// GeoJSON: FeatureCollection of points with the same properties.
// Records are sorted by plant_id before writing.
void export_predictions(std::vector<PredictionRecord> records, ExportFormat format, const std::string& path);

std::vector<PredictionRecord> read_predictions_csv(const std::string& path);

// Plant list CSV: plant_id,x,y,image_path
struct PlantListEntry {
    std::string plant_id;
    double x = 0.0;
    double y = 0.0;
    std::string image_path;
};

std::vector<PlantListEntry> load_plant_list(const std::string& path);

}  // namespace dldl
