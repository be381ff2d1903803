#pragma once

#include <string>
#include <vector>

#include "dldl/dataset.hpp"
#include "dldl/model.hpp"
#include "dldl/train.hpp"

namespace dldl {

// Per-head training-loss component curves, validation loss, and validation
// MDO curves as SVG files under out_dir. Returns the written paths.
std::vector<std::string> plot_metrics(const std::vector<EpochMetrics>& log, const std::string& out_dir);

// DS/GDD/NPG abundance histograms of an index as SVG files.
std::vector<std::string> plot_label_histograms(const DatasetIndex& index, const std::string& out_dir);

// Panels for one image: input composite, attention rollout, one panel per
// layer (num_layers + 2 files, PPM rasters). Returns the written paths.
std::vector<std::string> plot_attention_panels(const Model& model, const MultispectralImage& img,
                                               const std::string& out_dir);

}  // namespace dldl
