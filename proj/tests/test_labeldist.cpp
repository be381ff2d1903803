#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "dldl/losses.hpp"

using namespace dldl;

namespace {

LabelDistribution make_dist(const LabelSpace& space, std::vector<double> pmf) {
    return LabelDistribution{std::move(pmf), space};
}

std::vector<double> random_logits(std::size_t k, Rng& rng, double scale = 2.0) {
    std::vector<double> z(k);
    for (double& v : z) v = rng.uniform(-scale, scale);
    return z;
}

LabelDistribution random_pmf(const LabelSpace& space, Rng& rng) {
    std::vector<double> p(std::size_t(space.num_bins));
    double sum = 0.0;
    for (double& v : p) {
        v = -std::log(1.0 - rng.uniform01());
        sum += v;
    }
    for (double& v : p) v /= sum;
    return make_dist(space, std::move(p));
}

// Independent finite-difference oracle over the value-only evaluation path.
std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> z, double h = 1e-5) {
    std::vector<double> g(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        double keep = z[i];
        z[i] = keep + h;
        double up = f(z);
        z[i] = keep - h;
        double down = f(z);
        z[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        double denom = std::max({std::abs(got[i]), std::abs(want[i]), 1e-8});
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

LabelDistribution pmf_from_logits(const std::vector<double>& z, const LabelSpace& space) {
    return LabelDistribution{softmax_floored(z), space};
}

}  // namespace

TEST_CASE("label space geometry: bin spacing from the model tables") {
    LabelSpace ds111 = ds_space_pretrain();
    CHECK(ds111.spacing() == doctest::Approx(0.1).epsilon(1e-12));
    // every integer DS 0..10 lies on a bin center
    for (int v = 0; v <= 10; ++v) {
        int bin = ds111.bin_of(double(v));
        CHECK(ds111.center(bin) == doctest::Approx(double(v)).epsilon(1e-9));
    }
    LabelSpace ds89 = ds_space_finetune();
    CHECK(ds89.spacing() == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(ds89.center(0) == doctest::Approx(-0.5));
    CHECK(ds89.center(88) == doctest::Approx(10.5));

    CHECK_THROWS_AS((LabelSpace{1.0, 0.0, 5}.validate()), ConfigError);
    CHECK_THROWS_AS((LabelSpace{0.0, 1.0, 1}.validate()), ConfigError);
}

TEST_CASE("discretize_normal: delta limit, mass, expectation") {
    LabelSpace space = ds_space_pretrain();
    // sigma much smaller than the spacing collapses onto one bin
    LabelDistribution sharp = discretize_normal({5.0, space.spacing() / 100.0}, space);
    CHECK(sharp.pmf[std::size_t(space.bin_of(5.0))] == doctest::Approx(1.0).epsilon(1e-9));

    double mass = 0.0;
    for (double p : sharp.pmf) mass += p;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));

    LabelDistribution mid = discretize_normal({5.0, 0.6}, space);
    CHECK(expectation(mid) == doctest::Approx(5.0).epsilon(1e-6));

    bool flag = false;
    discretize_normal({5.0, 0.6}, space, &flag);
    CHECK_FALSE(flag);
    discretize_normal({20.0, 0.6}, space, &flag);
    CHECK(flag);
    CHECK_THROWS_AS(discretize_normal({5.0, 0.0}, space), ConfigError);

    // expectation lands within half a spacing whenever mu is 3 sigma inside
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        double sigma = rng.uniform(0.05, 1.5);
        double mu = rng.uniform(space.lower_limit + 3.0 * sigma, space.upper_limit - 3.0 * sigma);
        LabelDistribution d = discretize_normal({mu, sigma}, space);
        CHECK(std::abs(expectation(d) - mu) <= 0.5 * space.spacing());
    }
}

TEST_CASE("expectation and spread basics") {
    LabelSpace two{0.0, 1.0, 2};
    LabelDistribution uniform2 = make_dist(two, {0.5, 0.5});
    CHECK(expectation(uniform2) == doctest::Approx(0.5));
    CHECK(spread(uniform2) == doctest::Approx(0.5));

    LabelSpace space{0.0, 4.0, 5};
    LabelDistribution onehot = make_dist(space, {0.0, 0.0, 1.0, 0.0, 0.0});
    CHECK(expectation(onehot) == doctest::Approx(2.0));
    CHECK(spread(onehot) == doctest::Approx(0.0));

    LabelDistribution symmetric = make_dist(space, {0.1, 0.2, 0.4, 0.2, 0.1});
    CHECK(expectation(symmetric) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("label distribution loss hand examples") {
    LabelSpace space{0.0, 2.0, 3};
    LabelDistribution p = make_dist(space, {0.5, 0.5, 0.0});
    CHECK(loss_label_distribution(p, p) == doctest::Approx(0.0).epsilon(1e-6));

    LabelDistribution q = make_dist(space, {0.25, 0.25, 0.5});
    CHECK(loss_label_distribution(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // one-hot truth against uniform prediction: ln K
    for (int k : {3, 5, 8}) {
        LabelSpace s{0.0, 1.0, k};
        std::vector<double> onehot(std::size_t(k), 0.0);
        onehot[0] = 1.0;
        std::vector<double> uni(std::size_t(k), 1.0 / double(k));
        CHECK(loss_label_distribution(make_dist(s, onehot), make_dist(s, uni)) ==
              doctest::Approx(std::log(double(k))).epsilon(1e-6));
    }

    LabelSpace other{0.0, 2.0, 4};
    CHECK_THROWS_AS(loss_label_distribution(p, make_dist(other, {0.25, 0.25, 0.25, 0.25})), ShapeError);
}

TEST_CASE("label distribution loss is non-negative, zero iff equal (brute force)") {
    Rng rng(31);
    for (int rep = 0; rep < 500; ++rep) {
        int k = 2 + int(rng.uniform_index(7));  // K <= 8
        LabelSpace space{0.0, 1.0, k};
        LabelDistribution p = random_pmf(space, rng);
        LabelDistribution q = random_pmf(space, rng);
        double l = loss_label_distribution(p, q);
        CHECK(l >= 0.0);
        CHECK(loss_label_distribution(p, p) == doctest::Approx(0.0).epsilon(1e-9));
        double diff = 0.0;
        for (std::size_t i = 0; i < p.pmf.size(); ++i) diff = std::max(diff, std::abs(p.pmf[i] - q.pmf[i]));
        if (diff > 1e-3) CHECK(l > 0.0);
    }
}

TEST_CASE("expectation value loss hand examples") {
    // construct distributions with exact first two moments on a wide space
    LabelSpace space{-10.0, 10.0, 201};

    auto two_point = [&](double mu, double sigma) {
        // mass split between mu - sigma and mu + sigma has mean mu, std sigma
        std::vector<double> pmf(201, 0.0);
        int lo = space.bin_of(mu - sigma);
        int hi = space.bin_of(mu + sigma);
        pmf[std::size_t(lo)] = 0.5;
        pmf[std::size_t(hi)] = 0.5;
        return make_dist(space, pmf);
    };

    LabelDistribution truth = two_point(0.0, 1.0);
    CHECK(loss_expectation(truth, truth) == doctest::Approx(0.0).epsilon(1e-6));

    LabelDistribution shifted = two_point(1.0, 1.0);
    CHECK(loss_expectation(truth, shifted) == doctest::Approx(0.5).epsilon(1e-6));

    LabelDistribution wide = two_point(0.0, 2.0);
    CHECK(loss_expectation(truth, wide) ==
          doctest::Approx(std::log(2.0) - 0.5 + 1.0 / 8.0).epsilon(1e-6));
}

TEST_CASE("smoothness loss: uniform is zero, one-hot is maximal") {
    LabelSpace space{0.0, 1.0, 5};
    LabelDistribution uniform = make_dist(space, std::vector<double>(5, 0.2));
    CHECK(loss_smoothness(uniform) == doctest::Approx(0.0).epsilon(1e-9));

    LabelDistribution onehot = make_dist(space, {0.0, 0.0, 1.0, 0.0, 0.0});
    double l_onehot = loss_smoothness(onehot);
    CHECK(l_onehot > 0.0);

    // brute-force grid of pmfs on K = 5: none exceeds the one-hot value
    Rng rng(32);
    double worst = 0.0;
    for (int rep = 0; rep < 2000; ++rep) {
        LabelDistribution d = random_pmf(space, rng);
        double l = loss_smoothness(d);
        CHECK(l >= 0.0);
        worst = std::max(worst, l);
    }
    CHECK(worst <= l_onehot);

    // a smooth wide gaussian scores below the one-hot value
    LabelDistribution smooth = discretize_normal({0.5, 0.4}, space);
    CHECK(loss_smoothness(smooth) < l_onehot);
}

TEST_CASE("total loss composition") {
    LabelSpace space = ds_space_finetune();
    LabelDistribution truth = discretize_normal({4.0, 0.6}, space);

    LossBreakdown same = total_loss(truth, truth);
    CHECK(same.label_dist == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(same.expectation_value == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(same.smoothness >= 0.0);
    CHECK(same.total == doctest::Approx(same.label_dist + same.expectation_value + same.smoothness));

    Rng rng(33);
    LabelDistribution pred = random_pmf(space, rng);
    LossBreakdown b = total_loss(truth, pred);
    CHECK(b.total == doctest::Approx(b.label_dist + b.expectation_value + b.smoothness).epsilon(1e-12));
}

TEST_CASE("gradient check: each component against central differences") {
    Rng rng(34);
    const double step = 1e-5;
    const double tol = 1e-4;
    for (int rep = 0; rep < 100; ++rep) {
        int k = 4 + int(rng.uniform_index(20));
        LabelSpace space{-1.0, 3.0, k};
        LabelDistribution truth = discretize_normal({rng.uniform(-0.5, 2.5), rng.uniform(0.2, 0.8)}, space);
        std::vector<double> z = random_logits(std::size_t(k), rng);

        auto ld = loss_label_distribution_logits(z, truth);
        auto fd_ld = central_differences(
            [&](const std::vector<double>& zz) { return loss_label_distribution(truth, pmf_from_logits(zz, space)); },
            z, step);
        CHECK(max_rel_err(ld.d_logits, fd_ld) < tol);

        auto ex = loss_expectation_logits(z, truth);
        auto fd_ex = central_differences(
            [&](const std::vector<double>& zz) { return loss_expectation(truth, pmf_from_logits(zz, space)); }, z,
            step);
        CHECK(max_rel_err(ex.d_logits, fd_ex) < tol);

        auto sm = loss_smoothness_logits(z, space);
        auto fd_sm = central_differences(
            [&](const std::vector<double>& zz) { return loss_smoothness(pmf_from_logits(zz, space)); }, z, step);
        CHECK(max_rel_err(sm.d_logits, fd_sm) < tol);

        auto tot = total_loss_logits(z, truth);
        auto fd_tot = central_differences(
            [&](const std::vector<double>& zz) {
                return total_loss(truth, pmf_from_logits(zz, space)).total;
            },
            z, step);
        CHECK(max_rel_err(tot.d_logits, fd_tot) < tol);
        CHECK(tot.value.total ==
              doctest::Approx(ld.value + ex.value + sm.value).epsilon(1e-12));
    }
}

TEST_CASE("affine label-scale invariance of all three components") {
    Rng rng(35);
    for (int rep = 0; rep < 50; ++rep) {
        int k = 5 + int(rng.uniform_index(30));
        LabelSpace space{rng.uniform(-2.0, 0.0), rng.uniform(1.0, 4.0), k};
        LabelDistribution truth = random_pmf(space, rng);
        LabelDistribution pred = random_pmf(space, rng);

        double ld0 = loss_label_distribution(truth, pred);
        double ex0 = loss_expectation(truth, pred);
        double sm0 = loss_smoothness(pred);

        for (int m = 0; m < 10; ++m) {
            double a = rng.uniform(0.05, 40.0);
            double b = rng.uniform(-100.0, 100.0);
            LabelSpace mapped{a * space.lower_limit + b, a * space.upper_limit + b, k};
            LabelDistribution t2 = make_dist(mapped, truth.pmf);
            LabelDistribution p2 = make_dist(mapped, pred.pmf);
            CHECK(std::abs(loss_label_distribution(t2, p2) - ld0) < 1e-10);
            CHECK(std::abs(loss_expectation(t2, p2) - ex0) < 1e-10);
            CHECK(std::abs(loss_smoothness(p2) - sm0) < 1e-10);
        }
    }
}

TEST_CASE("mdo: hand examples and bounds") {
    LabelSpace space{0.0, 2.0, 3};
    LabelDistribution a = make_dist(space, {0.5, 0.5, 0.0});
    LabelDistribution b = make_dist(space, {0.0, 0.5, 0.5});
    CHECK(mdo({a}, {a}) == doctest::Approx(1.0));
    CHECK(mdo({a}, {b}) == doctest::Approx(0.5));

    LabelDistribution c = make_dist(space, {1.0, 0.0, 0.0});
    LabelDistribution d = make_dist(space, {0.0, 0.0, 1.0});
    CHECK(mdo({c}, {d}) == doctest::Approx(0.0));

    Rng rng(36);
    for (int rep = 0; rep < 200; ++rep) {
        LabelDistribution p = random_pmf(space, rng);
        LabelDistribution q = random_pmf(space, rng);
        double v = mdo({p}, {q});
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-12);
    }
    CHECK_THROWS_AS(mdo({}, {}), DataError);
}

TEST_CASE("mdo equals one iff batchwise equality") {
    LabelSpace space{0.0, 1.0, 4};
    Rng rng(37);
    for (int rep = 0; rep < 100; ++rep) {
        LabelDistribution p = random_pmf(space, rng);
        LabelDistribution q = random_pmf(space, rng);
        CHECK(mdo({p, q}, {p, q}) == doctest::Approx(1.0).epsilon(1e-12));
        double diff = 0.0;
        for (std::size_t i = 0; i < p.pmf.size(); ++i) diff = std::max(diff, std::abs(p.pmf[i] - q.pmf[i]));
        if (diff > 1e-6) CHECK(mdo({p, p}, {p, q}) < 1.0 - 1e-9);
    }
}

TEST_CASE("mae: hand examples and translation invariance") {
    LabelSpace space = ds_space_pretrain();
    LabelDistribution t3 = discretize_normal({3.0, 0.6}, space);
    LabelDistribution t5 = discretize_normal({5.0, 0.6}, space);
    CHECK(mae({t3}, {t3}) == doctest::Approx(0.0));
    // edge truncation of the discretized normals perturbs the expectations
    // at the 1e-7 level, hence the 1e-6 tolerance
    CHECK(mae({t3}, {t5}) == doctest::Approx(2.0).epsilon(1e-6));

    // adding a constant to both space limits moves both expectations equally
    LabelSpace shifted{space.lower_limit + 7.0, space.upper_limit + 7.0, space.num_bins};
    LabelDistribution s3 = make_dist(shifted, t3.pmf);
    LabelDistribution s5 = make_dist(shifted, t5.pmf);
    CHECK(mae({s3}, {s5}) == doctest::Approx(mae({t3}, {t5})).epsilon(1e-9));
    CHECK_THROWS_AS(mae({}, {}), DataError);
}

TEST_CASE("floored pmfs keep losses finite under softmax underflow") {
    LabelSpace space{0.0, 1.0, 6};
    std::vector<double> z = {100.0, 0.0, 0.0, 0.0, 0.0, -100.0};
    LabelDistribution truth = discretize_normal({0.5, 0.1}, space);
    auto got = total_loss_logits(z, truth);
    CHECK(std::isfinite(got.value.total));
    for (double g : got.d_logits) CHECK(std::isfinite(g));
}
