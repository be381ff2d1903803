#pragma once

#include "dldl/image.hpp"

namespace dldl {

enum class NormScope { kTotal, kChannelwise };

// The four per-image normalization variants, plus none.
enum class NormVariant { kNone, kStandardizeTotal, kStandardizeChannelwise, kEqualizeTotal, kEqualizeChannelwise };

NormVariant parse_norm_variant(const std::string& name);
std::string norm_variant_name(NormVariant v);

// (I - mean) / std with statistics over the whole image or per channel.
// Uses only the image's own statistics.
MultispectralImage standardize(const MultispectralImage& img, NormScope scope);

// Rank-based equalization onto [-1, 1]: v -> -1 + 2 (cdf(v) - cdf_min) / (N - cdf_min)
// with cdf counting values <= v inside the ranking scope. Ties share one output.
MultispectralImage hist_equalize(const MultispectralImage& img, NormScope scope);

MultispectralImage normalize(const MultispectralImage& img, NormVariant variant);

}  // namespace dldl
