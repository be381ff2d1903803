#pragma once

#include "dldl/dataset.hpp"

namespace dldl {

enum class SamplerFormula {
    kCellUniform,         // weight = 1 / n(dataset, binned label)
    kAbundanceTimesSize,  // weight = 1 / (N_label * S_dataset), the literal wording
};

// Per-row sampling weights normalized to sum 1. Under kCellUniform every
// non-empty (dataset, label) cell has the same expected sampling frequency.
std::vector<double> build_sampler(const DatasetIndex& index, const LabelSpace& space, LabelKind label,
                                  SamplerFormula formula = SamplerFormula::kCellUniform);

std::vector<double> build_sampler_for_rows(const std::vector<const IndexRow*>& rows, const LabelSpace& space,
                                           LabelKind label, SamplerFormula formula = SamplerFormula::kCellUniform);

// Cumulative-table categorical sampler.
class WeightedSampler {
public:
    explicit WeightedSampler(const std::vector<double>& weights);

    std::size_t draw(Rng& rng) const;
    std::size_t size() const { return cumulative_.size(); }

private:
    std::vector<double> cumulative_;
};

}  // namespace dldl
