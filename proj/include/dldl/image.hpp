#pragma once

#include <string>
#include <vector>

#include "dldl/common.hpp"

namespace dldl {

// C-channel H x W raster, channel-major, reflectance or normalized units.
struct MultispectralImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;             // channels * height * width
    std::vector<std::string> band_names;  // one per channel

    static MultispectralImage zeros(int channels, int height, int width);
    static std::vector<std::string> default_band_names(int channels);

    double& at(int c, int y, int x) {
        return data[(std::size_t(c) * std::size_t(height) + std::size_t(y)) * std::size_t(width) + std::size_t(x)];
    }
    double at(int c, int y, int x) const {
        return data[(std::size_t(c) * std::size_t(height) + std::size_t(y)) * std::size_t(width) + std::size_t(x)];
    }
    std::size_t pixel_count() const { return std::size_t(height) * std::size_t(width); }
    std::size_t value_count() const { return data.size(); }

    void validate() const;
};

// Binary container: magic, dims, band names, float32 raster.
void save_image(const MultispectralImage& img, const std::string& path);
MultispectralImage load_image(const std::string& path);

}  // namespace dldl
