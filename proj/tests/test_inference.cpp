#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dldl/augment.hpp"
#include "dldl/infer.hpp"
#include "dldl/losses.hpp"
#include "dldl/synth.hpp"

using namespace dldl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Model tiny_model(std::uint64_t seed, int k = 12) {
    ViTConfig vit{5, 24, 8, 16, 1, 2, 32, 0.0, 0.0};
    NeckConfig neck{16, 1, 0.0};
    HeadConfig ds;
    ds.label_name = "ds";
    ds.label_space = LabelSpace{-0.5, 10.5, k};
    ds.label_sigma = 0.6;
    ds.mlp_layers = 1;
    ds.mlp_layer_size = 12;
    ds.dropout = 0.0;
    return Model(vit, neck, {ds}, seed);
}

MultispectralImage random_image(int c, int s, Rng& rng) {
    MultispectralImage img = MultispectralImage::zeros(c, s, s);
    for (double& v : img.data) v = rng.normal();
    return img;
}

}  // namespace

TEST_CASE("predict_augmented: valid averaged pmf and confidence definition") {
    Model m = tiny_model(1);
    Rng rng(50);
    MultispectralImage img = random_image(5, 24, rng);

    PredictionRecord rec = predict_augmented(m, img, "ds", 0.6);
    rec.pmf.validate(1e-6);
    CHECK(rec.confidence == doctest::Approx(rec.sigma_pred / 0.6).epsilon(1e-12));
    CHECK(rec.sigma_pred >= 0.0);

    // confidence = 1 when sigma_train equals the predicted spread
    PredictionRecord cal = predict_augmented(m, img, "ds", rec.sigma_pred);
    CHECK(cal.confidence == doctest::Approx(1.0).epsilon(1e-12));

    // expectation lies within the hull of the 8 variant expectations
    auto variants = dihedral_variants(img);
    double lo = 1e300, hi = -1e300;
    for (const auto& v : variants) {
        double e = expectation(m.forward_one(v).head_pmfs[0]);
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    CHECK(rec.ds_pred >= lo - 1e-9);
    CHECK(rec.ds_pred <= hi + 1e-9);

    MultispectralImage rect = MultispectralImage::zeros(5, 24, 23);
    CHECK_THROWS_AS(predict_augmented(m, rect, "ds", 0.6), ShapeError);
    CHECK_THROWS_AS(predict_augmented(m, img, "nope", 0.6), ConfigError);
}

TEST_CASE("predict_augmented equals single-pass output on a symmetric input") {
    // an image invariant under the dihedral group makes all 8 variant
    // outputs identical, so the average equals the single pass
    Model m = tiny_model(2);
    MultispectralImage img = MultispectralImage::zeros(5, 24, 24);
    for (int c = 0; c < 5; ++c)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                double dy = y - 11.5, dx = x - 11.5;
                img.at(c, y, x) = std::sin(0.3 * (dy * dy + dx * dx)) + 0.1 * c;
            }
    PredictionRecord rec = predict_augmented(m, img, "ds", 0.6);
    LabelDistribution single = m.forward_one(img).head_pmfs[0];
    for (std::size_t i = 0; i < single.pmf.size(); ++i)
        CHECK(rec.pmf.pmf[i] == doctest::Approx(single.pmf[i]).epsilon(1e-9));
}

TEST_CASE("summarize_evaluation: oracle and constant-predictor stubs") {
    // perfect oracle: zero error, full overlap in every class
    std::vector<EvalSample> oracle;
    for (int cls = 0; cls <= 10; ++cls)
        for (int i = 0; i < 3; ++i) oracle.push_back({double(cls), 0.0, 1.0});
    TestEvaluation ev = summarize_evaluation(oracle);
    REQUIRE(ev.rows.size() == 11);
    CHECK(ev.omitted_classes.empty());
    for (const auto& row : ev.rows) {
        CHECK(row.mae == doctest::Approx(0.0));
        CHECK(row.mdo == doctest::Approx(1.0));
    }
    CHECK(ev.total_mae == doctest::Approx(0.0));
    CHECK(ev.total_mdo == doctest::Approx(1.0));

    // constant predictor at DS 0 on classes {0, 10}
    std::vector<EvalSample> stub;
    for (int i = 0; i < 4; ++i) stub.push_back({0.0, 0.0, 1.0});
    for (int i = 0; i < 2; ++i) stub.push_back({10.0, 10.0, 0.0});
    TestEvaluation sv = summarize_evaluation(stub);
    REQUIRE(sv.rows.size() == 2);
    CHECK(sv.rows[0].ds_class == 0);
    CHECK(sv.rows[0].mae == doctest::Approx(0.0));
    CHECK(sv.rows[1].ds_class == 10);
    CHECK(sv.rows[1].mae == doctest::Approx(10.0));
    CHECK(sv.omitted_classes.size() == 9);

    // plain total vs abundance-corrected total on the handcrafted 2-class set
    CHECK(sv.total_mae == doctest::Approx((4.0 * 0.0 + 2.0 * 10.0) / 6.0).epsilon(1e-12));
    CHECK(sv.total_mae_corrected == doctest::Approx((0.0 + 10.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("summarize_evaluation: plain total equals abundance-weighted class mean") {
    Rng rng(51);
    std::vector<EvalSample> samples;
    for (int i = 0; i < 500; ++i) {
        double ds = rng.uniform(0.0, 10.0);
        samples.push_back({ds, rng.uniform(0.0, 3.0), rng.uniform01()});
    }
    TestEvaluation ev = summarize_evaluation(samples);
    double weighted_mae = 0.0, weighted_mdo = 0.0;
    std::size_t total = 0;
    for (const auto& row : ev.rows) {
        weighted_mae += row.mae * double(row.count);
        weighted_mdo += row.mdo * double(row.count);
        total += row.count;
    }
    CHECK(total == samples.size());
    CHECK(ev.total_mae == doctest::Approx(weighted_mae / double(total)).epsilon(1e-9));
    CHECK(ev.total_mdo == doctest::Approx(weighted_mdo / double(total)).epsilon(1e-9));
}

TEST_CASE("evaluate_test runs end to end on synthetic data") {
    SynthSpec spec;
    spec.num_datasets = 1;
    spec.images_per_dataset = 33;
    spec.image_size = 24;
    spec.channels = 5;
    spec.noise = 0.0;
    spec.seed = 7;
    TempDir dir("dldl_eval_e2e");
    SynthResult data = generate(spec, dir.path.string());

    Model m = tiny_model(3);
    ImageStore store(dir.path.string(), NormVariant::kStandardizeTotal);
    TestEvaluation ev = evaluate_test(m, data.index, store, true);
    CHECK(!ev.rows.empty());
    std::size_t covered = 0;
    for (const auto& row : ev.rows) covered += row.count;
    CHECK(covered == data.index.rows.size());

    std::string path = (dir.path / "eval.csv").string();
    save_evaluation_csv(ev, path);
    CHECK(fs::exists(path));
}

TEST_CASE("export_predictions: csv round trip and sorting") {
    TempDir dir("dldl_export");
    std::vector<PredictionRecord> records;
    LabelSpace space{-0.5, 10.5, 12};
    Rng rng(52);
    for (int i = 0; i < 5; ++i) {
        PredictionRecord r;
        r.plant_id = "plant_" + std::to_string(9 - i);  // reversed on purpose
        r.x = rng.uniform(-180.0, 180.0);
        r.y = rng.uniform(-90.0, 90.0);
        r.pmf = discretize_normal({rng.uniform(0.0, 10.0), 0.6}, space);
        r.ds_pred = expectation(r.pmf);
        r.sigma_pred = spread(r.pmf);
        r.confidence = r.sigma_pred / 0.6;
        r.model_id = "toy";
        records.push_back(std::move(r));
    }

    std::string path = (dir.path / "pred.csv").string();
    export_predictions(records, ExportFormat::kCsv, path);
    auto loaded = read_predictions_csv(path);
    REQUIRE(loaded.size() == records.size());
    // sorted by plant id
    for (std::size_t i = 1; i < loaded.size(); ++i) CHECK(loaded[i - 1].plant_id < loaded[i].plant_id);
    // values survive the round trip to 1e-6
    for (const auto& orig : records) {
        bool found = false;
        for (const auto& got : loaded)
            if (got.plant_id == orig.plant_id) {
                found = true;
                CHECK(got.x == doctest::Approx(orig.x).epsilon(1e-6));
                CHECK(got.y == doctest::Approx(orig.y).epsilon(1e-6));
                CHECK(got.ds_pred == doctest::Approx(orig.ds_pred).epsilon(1e-6));
                CHECK(got.sigma_pred == doctest::Approx(orig.sigma_pred).epsilon(1e-6));
                CHECK(got.confidence == doctest::Approx(orig.confidence).epsilon(1e-6));
            }
        CHECK(found);
    }

    CHECK_THROWS_AS(export_predictions({}, ExportFormat::kCsv, path), DataError);
}

TEST_CASE("export_predictions: geojson structure") {
    TempDir dir("dldl_geojson");
    PredictionRecord r;
    r.plant_id = "p1";
    r.x = 9.88;
    r.y = 51.55;
    r.pmf = discretize_normal({3.0, 0.6}, LabelSpace{-0.5, 10.5, 12});
    r.ds_pred = expectation(r.pmf);
    r.sigma_pred = spread(r.pmf);
    r.confidence = 1.0;
    r.model_id = "toy";

    std::string path = (dir.path / "pred.geojson").string();
    export_predictions({r}, ExportFormat::kGeoJson, path);

    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    CHECK(j.at("type") == "FeatureCollection");
    REQUIRE(j.at("features").size() == 1);
    const auto& f = j.at("features").at(0);
    CHECK(f.at("type") == "Feature");
    CHECK(f.at("geometry").at("type") == "Point");
    CHECK(f.at("geometry").at("coordinates").at(0).get<double>() == doctest::Approx(9.88));
    CHECK(f.at("geometry").at("coordinates").at(1).get<double>() == doctest::Approx(51.55));
    CHECK(f.at("properties").at("plant_id") == "p1");
    CHECK(f.at("properties").at("ds_pred").get<double>() == doctest::Approx(r.ds_pred).epsilon(1e-9));
}

TEST_CASE("confidence is invariant under affine relabeling") {
    // both sigma_pred and sigma_train scale by the same factor
    LabelSpace space{-0.5, 10.5, 23};
    LabelDistribution pmf = discretize_normal({4.0, 0.8}, space);
    double sigma_train = 0.6;
    double conf = spread(pmf) / sigma_train;

    double a = 3.5, b = -2.0;
    LabelSpace mapped{a * space.lower_limit + b, a * space.upper_limit + b, space.num_bins};
    LabelDistribution moved{pmf.pmf, mapped};
    double conf_mapped = spread(moved) / (a * sigma_train);
    CHECK(conf_mapped == doctest::Approx(conf).epsilon(1e-9));
}

TEST_CASE("plant list parsing") {
    TempDir dir("dldl_plants");
    std::string path = (dir.path / "plants.csv").string();
    {
        std::ofstream out(path);
        out << "plant_id,x,y,image_path\np7,1.5,2.5,images/p7.img\np2,0.0,-1.0,images/p2.img\n";
    }
    auto plants = load_plant_list(path);
    REQUIRE(plants.size() == 2);
    CHECK(plants[0].plant_id == "p7");
    CHECK(plants[0].x == doctest::Approx(1.5));
    CHECK(plants[1].image_path == "images/p2.img");

    std::string bad = (dir.path / "bad.csv").string();
    {
        std::ofstream out(bad);
        out << "wrong,header\n";
    }
    CHECK_THROWS_AS(load_plant_list(bad), DataError);
}
