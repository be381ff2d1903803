#pragma once

#include "dldl/dataset.hpp"
#include "dldl/envmodel.hpp"

namespace dldl {

struct SynthSpec {
    int num_datasets = 2;
    int images_per_dataset = 1000;
    int image_size = 48;
    int channels = 5;
    std::string class_balance = "uniform";  // uniform | paper_like (skewed toward low DS)
    double noise = 0.02;
    std::uint64_t seed = 42;

    void validate() const;
};

// Deterministic class counts for one dataset under a balance profile
// (largest-remainder allocation over DS classes 0..10).
std::vector<int> class_allocation(const std::string& profile, int n);

// Procedural plant raster from a latent (DS, GDD, NPG) triple. The plant
// blob grows with GDD, lesion-spot density rises monotonically with DS
// through 9, and DS 10 renders a small fresh regrowth blob. With noise 0 the
// raster is a pure function of the latents.
MultispectralImage render_plant(double ds, double gdd, double npg, int image_size, int channels, double noise,
                                std::uint64_t noise_seed);

// Deliberately simple reference estimator on raw reflectance rasters:
// spot-pixel fraction thresholding plus a small-bright-blob regrowth rule.
double reference_ds_estimate(const MultispectralImage& img);

struct SynthResult {
    DatasetIndex index;       // image paths relative to out_dir
    std::string index_path;   // out_dir/index.csv
};

// Writes index.csv, per-plant image containers under images/, and one hourly
// weather CSV per dataset whose cumulative GDD/NPG reproduce the stored
// labels.
SynthResult generate(const SynthSpec& spec, const std::string& out_dir);

}  // namespace dldl
