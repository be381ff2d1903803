#pragma once

#include <string>
#include <vector>

#include "dldl/common.hpp"

namespace dldl {

// Evenly spaced bin centers including both limits.
struct LabelSpace {
    double lower_limit = 0.0;
    double upper_limit = 1.0;
    int num_bins = 2;

    void validate() const;
    double spacing() const { return (upper_limit - lower_limit) / double(num_bins - 1); }
    double center(int i) const { return lower_limit + double(i) * spacing(); }
    std::vector<double> centers() const;

    // Nearest bin center, clamped to the limits.
    int bin_of(double value) const;

    bool operator==(const LabelSpace&) const = default;
};

// Standard label spaces of this project.
LabelSpace ds_space_pretrain();   // 111 bins over [-0.5, 10.5], spacing 0.1
LabelSpace ds_space_finetune();   // 89 bins over [-0.5, 10.5], spacing 0.125
LabelSpace npg_space();           // 100 bins over [-0.5, 11.5]
LabelSpace gdd_space();           // 100 bins over [-5, 3500]

struct LabelDistribution {
    std::vector<double> pmf;
    LabelSpace space;

    void validate(double tol = 1e-6) const;
};

struct GaussianLabel {
    double mu = 0.0;
    double sigma = 1.0;
};

// pmf_i proportional to exp(-(y_i - mu)^2 / (2 sigma^2)) over the bin centers.
// Sets *out_of_range when mu lies outside [lower - 3 sigma, upper + 3 sigma].
LabelDistribution discretize_normal(const GaussianLabel& label, const LabelSpace& space,
                                    bool* out_of_range = nullptr);

double expectation(const LabelDistribution& dist);
double spread(const LabelDistribution& dist);

}  // namespace dldl
