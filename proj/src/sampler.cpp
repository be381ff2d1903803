#include "dldl/sampler.hpp"

#include <algorithm>
#include <map>

namespace dldl {

std::vector<double> build_sampler_for_rows(const std::vector<const IndexRow*>& rows, const LabelSpace& space,
                                           LabelKind label, SamplerFormula formula) {
    if (rows.empty()) throw DataError("build_sampler: empty index");
    std::vector<std::pair<std::string, long>> cells(rows.size());
    std::map<std::pair<std::string, long>, std::size_t> cell_count;
    std::map<long, std::size_t> label_count;
    std::map<std::string, std::size_t> dataset_count;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        long bin = binned_label(*rows[i], label, space);
        cells[i] = {rows[i]->dataset_id, bin};
        ++cell_count[cells[i]];
        ++label_count[bin];
        ++dataset_count[rows[i]->dataset_id];
    }
    std::vector<double> weights(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (formula == SamplerFormula::kCellUniform)
            weights[i] = 1.0 / double(cell_count[cells[i]]);
        else
            weights[i] = 1.0 / (double(label_count[cells[i].second]) * double(dataset_count[cells[i].first]));
    }
    double sum = 0.0;
    for (double w : weights) sum += w;
    for (double& w : weights) w /= sum;
    return weights;
}

std::vector<double> build_sampler(const DatasetIndex& index, const LabelSpace& space, LabelKind label,
                                  SamplerFormula formula) {
    std::vector<const IndexRow*> rows;
    rows.reserve(index.rows.size());
    for (const auto& row : index.rows) rows.push_back(&row);
    return build_sampler_for_rows(rows, space, label, formula);
}

WeightedSampler::WeightedSampler(const std::vector<double>& weights) {
    if (weights.empty()) throw DataError("WeightedSampler: no weights");
    cumulative_.resize(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] >= 0.0)) throw NumericError("negative sampling weight");
        acc += weights[i];
        cumulative_[i] = acc;
    }
    if (!(acc > 0.0)) throw NumericError("sampling weights sum to zero");
    for (double& c : cumulative_) c /= acc;
    cumulative_.back() = 1.0;
}

std::size_t WeightedSampler::draw(Rng& rng) const {
    double u = rng.uniform01();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return std::size_t(it - cumulative_.begin());
}

}  // namespace dldl
