#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "dldl/augment.hpp"
#include "dldl/normalize.hpp"
#include "dldl/synth.hpp"

using namespace dldl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

SynthSpec small_spec() {
    SynthSpec spec;
    spec.num_datasets = 2;
    spec.images_per_dataset = 44;
    spec.image_size = 32;
    spec.channels = 5;
    spec.noise = 0.01;
    spec.seed = 77;
    return spec;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("class allocation is exact and deterministic") {
    for (const char* profile : {"uniform", "paper_like"}) {
        for (int n : {11, 44, 100, 997}) {
            std::vector<int> counts = class_allocation(profile, n);
            REQUIRE(counts.size() == 11);
            CHECK(std::accumulate(counts.begin(), counts.end(), 0) == n);
            for (int c : counts) CHECK(c >= 0);
        }
    }
    // paper_like is skewed toward low DS
    std::vector<int> skew = class_allocation("paper_like", 1000);
    CHECK(skew[0] > skew[5]);
    CHECK(skew[0] > skew[9]);
    CHECK_THROWS_AS(class_allocation("nope", 10), ConfigError);
}

TEST_CASE("render_plant: same latent, noise 0 -> identical rasters") {
    MultispectralImage a = render_plant(4.2, 700.0, 3.1, 32, 5, 0.0, 1);
    MultispectralImage b = render_plant(4.2, 700.0, 3.1, 32, 5, 0.0, 999);  // noise seed unused at 0
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);

    // different latent -> different raster
    MultispectralImage c = render_plant(7.9, 700.0, 3.1, 32, 5, 0.0, 1);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != c.data[i]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("generate: deterministic under the seed") {
    SynthSpec spec = small_spec();
    TempDir d1("dldl_synth_det_1"), d2("dldl_synth_det_2");
    SynthResult r1 = generate(spec, d1.path.string());
    SynthResult r2 = generate(spec, d2.path.string());
    CHECK(slurp(r1.index_path) == slurp(r2.index_path));
    CHECK(slurp(d1.path / "weather_d00.csv") == slurp(d2.path / "weather_d00.csv"));
    CHECK(slurp(d1.path / r1.index.rows.front().image_path) ==
          slurp(d2.path / r2.index.rows.front().image_path));
}

TEST_CASE("generate: stored gdd/npg reproduce through the environmental model") {
    SynthSpec spec = small_spec();
    TempDir dir("dldl_synth_env");
    SynthResult res = generate(spec, dir.path.string());

    for (int d = 0; d < spec.num_datasets; ++d) {
        char ds_id[8];
        std::snprintf(ds_id, sizeof(ds_id), "d%02d", d);
        env::WeatherSeries weather = env::load_weather_csv((dir.path / ("weather_" + std::string(ds_id) + ".csv")).string());
        // sowing date: first weather record's date
        env::Date sowing = weather.records().front().timestamp.date;
        env::ThermalConfig gdd_cfg = env::sugar_beet_gdd_config(sowing);
        env::ThermalConfig npg_cfg = env::cercospora_npg_config(sowing);
        for (const auto& row : res.index.rows) {
            if (row.dataset_id != ds_id) continue;
            CHECK(env::cumulative_gdd(weather, gdd_cfg, row.recording_date) ==
                  doctest::Approx(row.gdd).epsilon(1e-6));
            CHECK(env::cumulative_npg(weather, npg_cfg, row.recording_date) ==
                  doctest::Approx(row.npg).epsilon(1e-6));
        }
    }
}

TEST_CASE("generate: class histogram matches the balance profile exactly") {
    SynthSpec spec = small_spec();
    spec.class_balance = "paper_like";
    TempDir dir("dldl_synth_hist");
    SynthResult res = generate(spec, dir.path.string());

    std::vector<int> expected = class_allocation("paper_like", spec.images_per_dataset);
    for (int d = 0; d < spec.num_datasets; ++d) {
        char ds_id[8];
        std::snprintf(ds_id, sizeof(ds_id), "d%02d", d);
        std::vector<int> got(11, 0);
        for (const auto& row : res.index.rows)
            if (row.dataset_id == ds_id) ++got[std::size_t(std::lround(*row.ds_label))];
        CHECK(got == expected);
    }
}

TEST_CASE("labels are recoverable: reference estimator MAE < 1.5 on noise-free data") {
    SynthSpec spec;
    spec.num_datasets = 1;
    spec.images_per_dataset = 330;
    spec.image_size = 48;
    spec.channels = 5;
    spec.noise = 0.0;
    spec.seed = 5150;
    TempDir dir("dldl_synth_estimator");
    SynthResult res = generate(spec, dir.path.string());

    double mae = 0.0;
    for (const auto& row : res.index.rows) {
        MultispectralImage img = load_image((dir.path / row.image_path).string());
        mae += std::abs(reference_ds_estimate(img) - *row.ds_label);
    }
    mae /= double(res.index.rows.size());
    CHECK(mae < 1.5);
    MESSAGE("reference estimator MAE = " << mae);
}

TEST_CASE("generated data survives every augmentation path without NaNs") {
    SynthSpec spec = small_spec();
    spec.images_per_dataset = 8;
    TempDir dir("dldl_synth_augment");
    SynthResult res = generate(spec, dir.path.string());

    AugmentPolicy policy;
    policy.flip_prob = 1.0;
    policy.rotate = true;
    policy.blur_prob = 1.0;
    policy.blur_strength_min = 3.0;
    policy.blur_strength_max = 8.0;
    policy.channel_dropout_prob = 1.0;
    policy.max_dropped_channels = 3;

    std::uint64_t seed = 0;
    for (const auto& row : res.index.rows) {
        MultispectralImage img = load_image((dir.path / row.image_path).string());
        for (auto variant :
             {NormVariant::kStandardizeTotal, NormVariant::kStandardizeChannelwise,
              NormVariant::kEqualizeTotal, NormVariant::kEqualizeChannelwise}) {
            MultispectralImage out = augment_train(normalize(img, variant), policy, seed++);
            out.validate();  // throws on non-finite values
        }
    }
}
