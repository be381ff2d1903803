#include "dldl/normalize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

namespace dldl {

namespace {

void standardize_span(std::span<double> values, const char* scope_name) {
    const double n = double(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= n;
    if (!(var > 0.0)) throw DataError(std::string("degenerate image: zero variance in ") + scope_name);
    double inv_std = 1.0 / std::sqrt(var);
    for (double& v : values) v = (v - mean) * inv_std;
}

void equalize_span(std::span<double> values, const char* scope_name) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    // cdf(v) = #{u <= v}; ties all receive the rank of their last member.
    std::vector<double> out(n);
    std::size_t cdf_min = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        std::size_t cdf = j + 1;
        if (i == 0) cdf_min = cdf;
        for (std::size_t k = i; k <= j; ++k) out[order[k]] = double(cdf);
        i = j + 1;
    }
    if (cdf_min == n) throw DataError(std::string("degenerate image: zero variance in ") + scope_name);
    const double denom = double(n - cdf_min);
    for (std::size_t k = 0; k < n; ++k) values[k] = -1.0 + 2.0 * (out[k] - double(cdf_min)) / denom;
}

template <typename Fn>
MultispectralImage apply_scoped(const MultispectralImage& img, NormScope scope, Fn&& fn) {
    img.validate();
    if (img.value_count() < 2) throw DataError("degenerate image: fewer than 2 values");
    MultispectralImage out = img;
    if (scope == NormScope::kTotal) {
        fn(std::span<double>(out.data), "image");
    } else {
        for (int c = 0; c < out.channels; ++c)
            fn(std::span<double>(out.data.data() + std::size_t(c) * out.pixel_count(), out.pixel_count()),
               out.band_names[std::size_t(c)].c_str());
    }
    return out;
}

}  // namespace

NormVariant parse_norm_variant(const std::string& name) {
    if (name == "none") return NormVariant::kNone;
    if (name == "standardize_total") return NormVariant::kStandardizeTotal;
    if (name == "standardize_channelwise") return NormVariant::kStandardizeChannelwise;
    if (name == "equalize_total") return NormVariant::kEqualizeTotal;
    if (name == "equalize_channelwise") return NormVariant::kEqualizeChannelwise;
    throw ConfigError("unknown normalization mode '" + name + "'");
}

std::string norm_variant_name(NormVariant v) {
    switch (v) {
        case NormVariant::kNone: return "none";
        case NormVariant::kStandardizeTotal: return "standardize_total";
        case NormVariant::kStandardizeChannelwise: return "standardize_channelwise";
        case NormVariant::kEqualizeTotal: return "equalize_total";
        case NormVariant::kEqualizeChannelwise: return "equalize_channelwise";
    }
    throw ConfigError("unknown normalization variant");
}

MultispectralImage standardize(const MultispectralImage& img, NormScope scope) {
    return apply_scoped(img, scope, [](std::span<double> v, const char* s) { standardize_span(v, s); });
}

MultispectralImage hist_equalize(const MultispectralImage& img, NormScope scope) {
    return apply_scoped(img, scope, [](std::span<double> v, const char* s) { equalize_span(v, s); });
}

MultispectralImage normalize(const MultispectralImage& img, NormVariant variant) {
    switch (variant) {
        case NormVariant::kNone: return img;
        case NormVariant::kStandardizeTotal: return standardize(img, NormScope::kTotal);
        case NormVariant::kStandardizeChannelwise: return standardize(img, NormScope::kChannelwise);
        case NormVariant::kEqualizeTotal: return hist_equalize(img, NormScope::kTotal);
        case NormVariant::kEqualizeChannelwise: return hist_equalize(img, NormScope::kChannelwise);
    }
    throw ConfigError("unknown normalization variant");
}

}  // namespace dldl
