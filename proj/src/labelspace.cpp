#include "dldl/labelspace.hpp"

#include <algorithm>
#include <cmath>

namespace dldl {

void LabelSpace::validate() const {
    if (!(lower_limit < upper_limit)) throw ConfigError("label space requires lower < upper");
    if (num_bins < 2) throw ConfigError("label space requires at least 2 bins");
}

std::vector<double> LabelSpace::centers() const {
    std::vector<double> c(static_cast<std::size_t>(num_bins));
    for (int i = 0; i < num_bins; ++i) c[static_cast<std::size_t>(i)] = center(i);
    return c;
}

int LabelSpace::bin_of(double value) const {
    double idx = (value - lower_limit) / spacing();
    int i = static_cast<int>(std::lround(idx));
    return std::clamp(i, 0, num_bins - 1);
}

LabelSpace ds_space_pretrain() { return {-0.5, 10.5, 111}; }
LabelSpace ds_space_finetune() { return {-0.5, 10.5, 89}; }
LabelSpace npg_space() { return {-0.5, 11.5, 100}; }
LabelSpace gdd_space() { return {-5.0, 3500.0, 100}; }

void LabelDistribution::validate(double tol) const {
    space.validate();
    if (pmf.size() != static_cast<std::size_t>(space.num_bins))
        throw ShapeError("pmf length does not match label space bin count");
    double sum = 0.0;
    for (double p : pmf) {
        if (!(p >= 0.0)) throw NumericError("pmf entry negative or NaN");
        sum += p;
    }
    if (std::abs(sum - 1.0) > tol) throw NumericError("pmf does not sum to 1");
}

LabelDistribution discretize_normal(const GaussianLabel& label, const LabelSpace& space, bool* out_of_range) {
    space.validate();
    if (!(label.sigma > 0.0)) throw ConfigError("discretize_normal requires sigma > 0");
    if (out_of_range != nullptr)
        *out_of_range = label.mu < space.lower_limit - 3.0 * label.sigma ||
                        label.mu > space.upper_limit + 3.0 * label.sigma;

    const int k = space.num_bins;
    std::vector<double> logp(static_cast<std::size_t>(k));
    double max_logp = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
        double d = (space.center(i) - label.mu) / label.sigma;
        logp[static_cast<std::size_t>(i)] = -0.5 * d * d;
        max_logp = std::max(max_logp, logp[static_cast<std::size_t>(i)]);
    }
    LabelDistribution dist{std::vector<double>(static_cast<std::size_t>(k)), space};
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        double v = std::exp(logp[static_cast<std::size_t>(i)] - max_logp);
        dist.pmf[static_cast<std::size_t>(i)] = v;
        sum += v;
    }
    for (double& p : dist.pmf) p /= sum;
    return dist;
}

double expectation(const LabelDistribution& dist) {
    double mu = 0.0;
    for (int i = 0; i < dist.space.num_bins; ++i)
        mu += dist.space.center(i) * dist.pmf[static_cast<std::size_t>(i)];
    return mu;
}

double spread(const LabelDistribution& dist) {
    double mu = expectation(dist);
    double var = 0.0;
    for (int i = 0; i < dist.space.num_bins; ++i) {
        double d = dist.space.center(i) - mu;
        var += d * d * dist.pmf[static_cast<std::size_t>(i)];
    }
    return std::sqrt(std::max(var, 0.0));
}

}  // namespace dldl
