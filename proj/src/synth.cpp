#include "dldl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

namespace dldl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Reflectance palette, order B, G, R, REDGE, NIR.
constexpr double kSoil[5] = {0.10, 0.14, 0.18, 0.22, 0.30};
constexpr double kHealthy[5] = {0.05, 0.12, 0.07, 0.35, 0.55};
constexpr double kRegrowth[5] = {0.05, 0.18, 0.06, 0.40, 0.68};
constexpr double kNecrotic[5] = {0.09, 0.10, 0.30, 0.24, 0.38};
constexpr double kSpot[5] = {0.08, 0.09, 0.14, 0.13, 0.10};

constexpr double kSpotBudgetAt9 = 0.35;      // spot area budget at DS 9, before overlap
constexpr double kMeanSpotRadiusSq = 2.013;  // E[r^2] for r ~ U[1, 1.8]
constexpr double kGddFullSize = 1800.0;      // GDD at which the plant reaches full radius

// Observed spot-pixel fraction curve of the renderer (overlap shrinks the
// budget): frac(ds) ~ kSpotCurveScale * (ds/9)^kSpotCurveExponent.
constexpr double kSpotCurveScale = 0.19;
constexpr double kSpotCurveExponent = 1.55;

std::uint64_t latent_key(double ds, double gdd, double npg) {
    auto q = [](double v) { return std::uint64_t(std::llround(v * 1e6)); };
    std::uint64_t k = splitmix64(q(ds));
    k = splitmix64(k ^ q(gdd));
    k = splitmix64(k ^ q(npg));
    return k;
}

struct Palette {
    double soil[5], veg[5];
};

}  // namespace

void SynthSpec::validate() const {
    if (num_datasets < 1 || images_per_dataset < 1) throw ConfigError("synth counts must be >= 1");
    if (image_size < 16) throw ConfigError("synth image_size must be >= 16");
    if (channels < 1 || channels > 5) throw ConfigError("synth channels must lie in 1..5");
    if (!(noise >= 0.0)) throw ConfigError("synth noise must be >= 0");
    if (class_balance != "uniform" && class_balance != "paper_like")
        throw ConfigError("unknown class balance profile '" + class_balance + "'");
}

std::vector<int> class_allocation(const std::string& profile, int n) {
    std::vector<double> weights(11, 1.0);
    if (profile == "paper_like") {
        const double w[11] = {6.0, 5.0, 4.0, 3.0, 2.5, 2.0, 1.5, 1.0, 1.0, 1.0, 1.5};
        std::copy(w, w + 11, weights.begin());
    } else if (profile != "uniform") {
        throw ConfigError("unknown class balance profile '" + profile + "'");
    }
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> counts(11, 0);
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (int c = 0; c <= 10; ++c) {
        double exact = double(n) * weights[std::size_t(c)] / total;
        counts[std::size_t(c)] = int(std::floor(exact));
        assigned += counts[std::size_t(c)];
        remainders.push_back({exact - std::floor(exact), c});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < n - assigned; ++i) ++counts[std::size_t(remainders[std::size_t(i)].second)];
    return counts;
}

MultispectralImage render_plant(double ds, double gdd, double npg, int image_size, int channels, double noise,
                                std::uint64_t noise_seed) {
    if (channels < 1 || channels > 5) throw ConfigError("render_plant supports 1..5 channels");
    const int s = image_size;
    Rng shape_rng(latent_key(ds, gdd, npg));
    const bool regrowth = ds >= 9.5;

    const double growth = std::min(gdd / kGddFullSize, 1.0);
    double radius = double(s) * (0.18 + 0.20 * growth);
    if (regrowth) radius *= 0.45;
    const double cy = double(s) / 2.0 + shape_rng.uniform(-double(s) / 12.0, double(s) / 12.0);
    const double cx = double(s) / 2.0 + shape_rng.uniform(-double(s) / 12.0, double(s) / 12.0);
    const int lobes = 5 + int(shape_rng.uniform_index(4));
    const double lobe_phase = shape_rng.uniform(0.0, 2.0 * kPi);
    const double soil_fx = shape_rng.uniform(0.5, 1.5);
    const double soil_fy = shape_rng.uniform(0.5, 1.5);
    const double soil_phase = shape_rng.uniform(0.0, 2.0 * kPi);

    const double necrosis = regrowth ? 0.0 : std::min(ds, 9.0) / 12.0;

    // spot budget targets a spot area fraction monotone in DS
    int n_spots = 0;
    if (regrowth) {
        n_spots = 2;
    } else if (ds > 0.0) {
        double frac = kSpotBudgetAt9 * std::pow(std::min(ds, 9.0) / 9.0, 1.5);
        n_spots = int(std::lround(frac * radius * radius / kMeanSpotRadiusSq));
        if (ds > 0.3 && n_spots == 0) n_spots = 1;
    }
    struct Spot {
        double y, x, r;
    };
    std::vector<Spot> spots;
    spots.reserve(std::size_t(n_spots));
    for (int i = 0; i < n_spots; ++i) {
        double a = shape_rng.uniform(0.0, 2.0 * kPi);
        double rr = radius * 0.9 * std::sqrt(shape_rng.uniform01());
        spots.push_back({cy + rr * std::sin(a), cx + rr * std::cos(a),
                         regrowth ? 1.0 : shape_rng.uniform(1.0, 1.8)});
    }

    MultispectralImage img = MultispectralImage::zeros(channels, s, s);
    const double* veg = regrowth ? kRegrowth : kHealthy;
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            double dy = double(y) - cy;
            double dx = double(x) - cx;
            double r = std::sqrt(dy * dy + dx * dx);
            double theta = std::atan2(dy, dx);
            double lobe_r = radius * (1.0 + 0.25 * std::sin(double(lobes) * theta + lobe_phase));
            double veg_w = std::clamp(lobe_r - r + 0.5, 0.0, 1.0);
            // outer leaves are more necrotic
            double radial = lobe_r > 0.0 ? std::clamp(r / lobe_r, 0.0, 1.0) : 0.0;
            double nf = necrosis * (0.6 + 0.4 * radial);
            double spot_w = 0.0;
            for (const auto& sp : spots) {
                double sd = std::sqrt((double(y) - sp.y) * (double(y) - sp.y) +
                                      (double(x) - sp.x) * (double(x) - sp.x));
                spot_w = std::max(spot_w, std::clamp(sp.r - sd + 0.5, 0.0, 1.0));
            }
            double soil_mod = 1.0 + 0.08 * std::sin(2.0 * kPi * (soil_fx * double(x) + soil_fy * double(y)) /
                                                        double(s) +
                                                    soil_phase);
            for (int c = 0; c < channels; ++c) {
                double veg_c = veg[c] * (1.0 - nf) + kNecrotic[c] * nf;
                double v = kSoil[c] * soil_mod * (1.0 - veg_w) + veg_c * veg_w;
                v = v * (1.0 - veg_w * spot_w) + kSpot[c] * veg_w * spot_w;
                img.at(c, y, x) = v;
            }
        }
    }
    if (noise > 0.0) {
        Rng noise_rng(noise_seed);
        for (double& v : img.data) v += noise_rng.normal() * noise;
    }
    return img;
}

double reference_ds_estimate(const MultispectralImage& img) {
    img.validate();
    if (img.channels < 5) throw ConfigError("reference_ds_estimate needs the NIR band");
    const int nir = 4;
    std::size_t n_veg = 0, n_spot = 0;
    double veg_nir_sum = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double v = img.at(nir, y, x);
            if (v > 0.34) {
                ++n_veg;
                veg_nir_sum += v;
            } else if (v < 0.17) {
                ++n_spot;
            }
        }
    std::size_t plant = n_veg + n_spot;
    if (plant == 0) return 0.0;
    double spot_frac = double(n_spot) / double(plant);
    if (n_veg > 0) {
        double mean_nir = veg_nir_sum / double(n_veg);
        double plant_frac = double(plant) / double(img.pixel_count());
        if (mean_nir > 0.58 && spot_frac < 0.08 && plant_frac < 0.12) return 10.0;
    }
    double est = 9.0 * std::pow(spot_frac / kSpotCurveScale, 1.0 / kSpotCurveExponent);
    return std::clamp(est, 0.0, 9.0);
}

namespace {

env::WeatherSeries synth_weather(const env::Date& sowing, int days, Rng& rng) {
    std::vector<env::WeatherRecord> recs;
    recs.reserve(std::size_t(days) * 24);
    for (int d = 0; d < days; ++d) {
        env::Date date = env::add_days(sowing, d);
        for (int h = 0; h < 24; ++h) {
            double seasonal = 12.0 + 8.0 * std::sin(2.0 * kPi * (double(d) - 30.0) / 180.0);
            double diurnal = 6.0 * std::sin(2.0 * kPi * (double(h) - 9.0) / 24.0);
            double temp = std::clamp(seasonal + diurnal + rng.normal() * 1.5, -5.0, 38.0);
            double rh = std::clamp(65.0 + 25.0 * std::sin(2.0 * kPi * double(h) / 24.0 + 2.1) +
                                       rng.normal() * 8.0,
                                   20.0, 100.0);
            recs.push_back({{date, h}, temp, rh});
        }
    }
    return env::WeatherSeries(std::move(recs));
}

}  // namespace

SynthResult generate(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/images");

    constexpr int kRecordingDates = 8;
    constexpr int kFirstRecordingDay = 30;
    constexpr int kRecordingInterval = 10;

    SynthResult result;
    std::uint64_t image_counter = 0;
    for (int d = 0; d < spec.num_datasets; ++d) {
        char ds_id[8];
        std::snprintf(ds_id, sizeof(ds_id), "d%02d", d);
        env::Date sowing = env::add_days(env::parse_date("2021-04-01"), 7 * d);
        Rng weather_rng(derive_seed(spec.seed, 100 + std::uint64_t(d)));
        env::WeatherSeries weather =
            synth_weather(sowing, kFirstRecordingDay + kRecordingInterval * kRecordingDates + 5, weather_rng);
        env::save_weather_csv(weather, out_dir + "/weather_" + ds_id + ".csv");

        env::ThermalConfig gdd_cfg = env::sugar_beet_gdd_config(sowing);
        env::ThermalConfig npg_cfg = env::cercospora_npg_config(sowing);
        std::vector<env::Date> rec_dates;
        std::vector<double> gdd_at, npg_at;
        for (int k = 0; k < kRecordingDates; ++k) {
            env::Date date = env::add_days(sowing, kFirstRecordingDay + kRecordingInterval * k);
            rec_dates.push_back(date);
            gdd_at.push_back(env::cumulative_gdd(weather, gdd_cfg, date));
            npg_at.push_back(env::cumulative_npg(weather, npg_cfg, date));
        }

        // deterministic class counts, shuffled assignment order
        std::vector<int> counts = class_allocation(spec.class_balance, spec.images_per_dataset);
        std::vector<int> classes;
        classes.reserve(std::size_t(spec.images_per_dataset));
        for (int c = 0; c <= 10; ++c) classes.insert(classes.end(), std::size_t(counts[std::size_t(c)]), c);
        Rng assign_rng(derive_seed(spec.seed, 200 + std::uint64_t(d)));
        for (std::size_t i = classes.size(); i > 1; --i)
            std::swap(classes[i - 1], classes[assign_rng.uniform_index(i)]);

        for (int i = 0; i < spec.images_per_dataset; ++i) {
            Rng row_rng(derive_seed(spec.seed, 1000003ULL * std::uint64_t(d) + std::uint64_t(i)));
            int cls = classes[std::size_t(i)];
            double jitter = cls == 0   ? row_rng.uniform(0.0, 0.35)
                            : cls == 10 ? row_rng.uniform(-0.35, 0.0)
                                        : row_rng.uniform(-0.35, 0.35);
            double ds = double(cls) + jitter;
            // disease progresses through the season: later dates carry higher DS
            double date_pos = ds / 10.0 * double(kRecordingDates - 1) + row_rng.normal() * 0.7;
            int rec = std::clamp(int(std::lround(date_pos)), 0, kRecordingDates - 1);

            IndexRow row;
            char name[48];
            std::snprintf(name, sizeof(name), "images/%s_%06d.img", ds_id, i);
            row.image_path = name;
            row.dataset_id = ds_id;
            row.recording_date = rec_dates[std::size_t(rec)];
            row.ds_label = ds;
            row.gdd = gdd_at[std::size_t(rec)];
            row.npg = npg_at[std::size_t(rec)];

            MultispectralImage img =
                render_plant(ds, row.gdd, row.npg, spec.image_size, spec.channels, spec.noise,
                             derive_seed(spec.seed, 0x9000000ULL + image_counter));
            save_image(img, out_dir + "/" + row.image_path);
            result.index.rows.push_back(std::move(row));
            ++image_counter;
        }
    }
    result.index.validate();
    result.index_path = out_dir + "/index.csv";
    save_index_csv(result.index, result.index_path);
    return result;
}

}  // namespace dldl
