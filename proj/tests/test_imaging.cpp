#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "dldl/augment.hpp"
#include "dldl/image.hpp"
#include "dldl/normalize.hpp"

using namespace dldl;

namespace {

MultispectralImage random_image(int c, int h, int w, Rng& rng) {
    MultispectralImage img = MultispectralImage::zeros(c, h, w);
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    return img;
}

double scope_mean(const MultispectralImage& img) {
    double s = 0.0;
    for (double v : img.data) s += v;
    return s / double(img.data.size());
}

double scope_std(const MultispectralImage& img) {
    double m = scope_mean(img);
    double s = 0.0;
    for (double v : img.data) s += (v - m) * (v - m);
    return std::sqrt(s / double(img.data.size()));
}

}  // namespace

TEST_CASE("standardize total: toy two-channel example") {
    // ch0 all 1, ch1 all 3 -> joint mean 2, std 1 -> ch0 = -1, ch1 = +1
    MultispectralImage img = MultispectralImage::zeros(2, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            img.at(0, y, x) = 1.0;
            img.at(1, y, x) = 3.0;
        }
    MultispectralImage out = standardize(img, NormScope::kTotal);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            CHECK(out.at(0, y, x) == doctest::Approx(-1.0).epsilon(1e-12));
            CHECK(out.at(1, y, x) == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("standardize post-conditions per scope") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        MultispectralImage img = random_image(3, 8, 8, rng);
        MultispectralImage tot = standardize(img, NormScope::kTotal);
        CHECK(scope_mean(tot) == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(scope_std(tot) == doctest::Approx(1.0).epsilon(1e-6));

        MultispectralImage ch = standardize(img, NormScope::kChannelwise);
        for (int c = 0; c < 3; ++c) {
            double m = 0.0, s = 0.0;
            for (std::size_t i = 0; i < ch.pixel_count(); ++i) m += ch.data[c * ch.pixel_count() + i];
            m /= double(ch.pixel_count());
            for (std::size_t i = 0; i < ch.pixel_count(); ++i) {
                double d = ch.data[c * ch.pixel_count() + i] - m;
                s += d * d;
            }
            s = std::sqrt(s / double(ch.pixel_count()));
            CHECK(m == doctest::Approx(0.0).epsilon(1e-6));
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("standardize idempotent on a fixed point, errors on constant images") {
    Rng rng(12);
    MultispectralImage img = random_image(2, 6, 6, rng);
    MultispectralImage once = standardize(img, NormScope::kTotal);
    MultispectralImage twice = standardize(once, NormScope::kTotal);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(twice.data[i] == doctest::Approx(once.data[i]).epsilon(1e-6));

    MultispectralImage flat = MultispectralImage::zeros(1, 4, 4);
    for (double& v : flat.data) v = 2.5;
    CHECK_THROWS_AS(standardize(flat, NormScope::kTotal), DataError);
    CHECK_THROWS_AS(hist_equalize(flat, NormScope::kTotal), DataError);

    // channelwise mode errors when any one channel is constant
    MultispectralImage half = random_image(2, 4, 4, rng);
    for (std::size_t i = 0; i < half.pixel_count(); ++i) half.data[i] = 7.0;
    CHECK_THROWS_AS(standardize(half, NormScope::kChannelwise), DataError);
    CHECK(standardize(half, NormScope::kTotal).channels == 2);
}

TEST_CASE("standardize total preserves cross-channel difference ordering") {
    Rng rng(13);
    MultispectralImage img = random_image(3, 5, 5, rng);
    MultispectralImage out = standardize(img, NormScope::kTotal);
    for (int rep = 0; rep < 200; ++rep) {
        int pa = int(rng.uniform_index(25)), qa = int(rng.uniform_index(25));
        int ca = int(rng.uniform_index(3)), cb = int(rng.uniform_index(3));
        int py = pa / 5, px = pa % 5, qy = qa / 5, qx = qa % 5;
        double before = (img.at(ca, py, px) - img.at(cb, py, px)) - (img.at(ca, qy, qx) - img.at(cb, qy, qx));
        double after = (out.at(ca, py, px) - out.at(cb, py, px)) - (out.at(ca, qy, qx) - out.at(cb, qy, qx));
        if (before > 1e-12) CHECK(after > 0.0);
        if (before < -1e-12) CHECK(after < 0.0);
    }
}

TEST_CASE("hist_equalize hand examples") {
    // 4-pixel channel [10, 20, 20, 40] -> [-1, 1/3, 1/3, 1]
    MultispectralImage img = MultispectralImage::zeros(1, 2, 2);
    img.at(0, 0, 0) = 10.0;
    img.at(0, 0, 1) = 20.0;
    img.at(0, 1, 0) = 20.0;
    img.at(0, 1, 1) = 40.0;
    MultispectralImage out = hist_equalize(img, NormScope::kTotal);
    CHECK(out.at(0, 0, 0) == doctest::Approx(-1.0));
    CHECK(out.at(0, 0, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(out.at(0, 1, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(out.at(0, 1, 1) == doctest::Approx(1.0));
}

TEST_CASE("hist_equalize: permutation maps to evenly spaced values") {
    Rng rng(14);
    const int n = 36;
    MultispectralImage img = MultispectralImage::zeros(1, 6, 6);
    std::vector<double> vals(n);
    for (int i = 0; i < n; ++i) vals[std::size_t(i)] = double(i + 1);
    for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[rng.uniform_index(i)]);
    img.data = vals;
    MultispectralImage out = hist_equalize(img, NormScope::kTotal);

    std::vector<double> sorted = out.data;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i)
        CHECK(sorted[std::size_t(i)] == doctest::Approx(-1.0 + 2.0 * i / (n - 1)).epsilon(1e-12));
    // ordering is preserved
    for (std::size_t a = 0; a < img.data.size(); ++a)
        for (std::size_t b = a + 1; b < img.data.size(); ++b)
            if (img.data[a] < img.data[b]) CHECK(out.data[a] < out.data[b]);
}

TEST_CASE("hist_equalize range, monotonicity, idempotence on random images") {
    Rng rng(15);
    for (int rep = 0; rep < 10; ++rep) {
        MultispectralImage img = random_image(2, 7, 7, rng);
        for (auto scope : {NormScope::kTotal, NormScope::kChannelwise}) {
            MultispectralImage out = hist_equalize(img, scope);
            for (double v : out.data) {
                CHECK(v >= -1.0);
                CHECK(v <= 1.0);
            }
            MultispectralImage again = hist_equalize(out, scope);
            for (std::size_t i = 0; i < out.data.size(); ++i)
                CHECK(again.data[i] == doctest::Approx(out.data[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("dihedral variants: marker pixel tracking") {
    const int n = 5;
    MultispectralImage img = MultispectralImage::zeros(1, n, n);
    img.at(0, 0, 0) = 1.0;  // marker top-left
    auto variants = dihedral_variants(img);

    // expected marker coordinates per variant, enumerated by hand:
    // k quarter turns clockwise move (0,0) -> (0,n-1) -> (n-1,n-1) -> (n-1,0);
    // the mirrored variants flip the x coordinate.
    struct Pos {
        int y, x;
    };
    const Pos expected[8] = {{0, 0},     {0, n - 1},     {n - 1, n - 1}, {n - 1, 0},
                             {0, n - 1}, {0, 0},         {n - 1, 0},     {n - 1, n - 1}};
    for (int k = 0; k < 8; ++k) {
        const auto& v = variants[std::size_t(k)];
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double want = (y == expected[k].y && x == expected[k].x) ? 1.0 : 0.0;
                CHECK(v.at(0, y, x) == want);
            }
    }

    // index 0 is the original
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(variants[0].data[i] == img.data[i]);
}

TEST_CASE("dihedral variants: symmetric image and isometry") {
    Rng rng(16);
    // fully symmetric image -> 8 identical copies
    MultispectralImage sym = MultispectralImage::zeros(1, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double dy = y - 1.5, dx = x - 1.5;
            sym.at(0, y, x) = dy * dy + dx * dx;
        }
    auto sv = dihedral_variants(sym);
    for (int k = 1; k < 8; ++k)
        for (std::size_t i = 0; i < sym.data.size(); ++i) CHECK(sv[std::size_t(k)].data[i] == sv[0].data[i]);

    // each variant preserves the multiset of pixel values exactly
    MultispectralImage img = random_image(2, 6, 6, rng);
    auto variants = dihedral_variants(img);
    std::multiset<double> original(img.data.begin(), img.data.end());
    for (const auto& v : variants) CHECK(std::multiset<double>(v.data.begin(), v.data.end()) == original);

    // group closure: four quarter turns reproduce the original
    MultispectralImage r = rotate90cw(rotate90cw(rotate90cw(rotate90cw(img, 1), 1), 1), 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(r.data[i] == img.data[i]);

    MultispectralImage rect = MultispectralImage::zeros(1, 3, 4);
    CHECK_THROWS_AS(dihedral_variants(rect), ShapeError);
}

TEST_CASE("augment_train: identity policy and determinism") {
    Rng rng(17);
    MultispectralImage img = random_image(5, 12, 12, rng);

    MultispectralImage out = augment_train(img, AugmentPolicy::none(), 123);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == img.data[i]);

    AugmentPolicy policy = AugmentPolicy::field_with_channel_dropout();
    policy.blur_strength_min = 1.0;
    policy.blur_strength_max = 2.0;
    MultispectralImage a = augment_train(img, policy, 9001);
    MultispectralImage b = augment_train(img, policy, 9001);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
    CHECK(a.channels == img.channels);
    CHECK(a.height == img.height);
    CHECK(a.width == img.width);
}

TEST_CASE("augment_train: channel dropout zeroes whole channels, leaves others") {
    Rng rng(18);
    MultispectralImage img = random_image(5, 8, 8, rng);
    for (double& v : img.data) v += 0.5;  // keep strictly positive

    AugmentPolicy policy = AugmentPolicy::none();
    policy.channel_dropout_prob = 1.0;
    policy.max_dropped_channels = 3;

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        MultispectralImage out = augment_train(img, policy, seed);
        int dropped = 0;
        for (int c = 0; c < 5; ++c) {
            bool all_zero = true;
            bool untouched = true;
            for (std::size_t i = 0; i < img.pixel_count(); ++i) {
                double v = out.data[c * out.pixel_count() + i];
                if (v != 0.0) all_zero = false;
                if (v != img.data[c * img.pixel_count() + i]) untouched = false;
            }
            CHECK((all_zero || untouched));
            if (all_zero) ++dropped;
        }
        CHECK(dropped >= 1);
        CHECK(dropped <= 3);
    }
}

TEST_CASE("rotation by angle 0 is exact; blur preserves constants") {
    Rng rng(19);
    MultispectralImage img = random_image(2, 9, 9, rng);
    MultispectralImage rot = rotate_bilinear(img, 0.0);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(rot.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));

    MultispectralImage flat = MultispectralImage::zeros(1, 9, 9);
    for (double& v : flat.data) v = 3.25;
    MultispectralImage blurred = gaussian_blur(flat, 2.0);
    for (double v : blurred.data) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("image container round trip") {
    Rng rng(20);
    MultispectralImage img = random_image(5, 16, 16, rng);
    std::string path = "test_image_roundtrip.img";
    save_image(img, path);
    MultispectralImage loaded = load_image(path);
    CHECK(loaded.channels == img.channels);
    CHECK(loaded.height == img.height);
    CHECK(loaded.width == img.width);
    CHECK(loaded.band_names == img.band_names);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(loaded.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_image("does_not_exist.img"), DataError);
}
