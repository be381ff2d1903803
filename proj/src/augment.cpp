#include "dldl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dldl {

namespace {

// Symmetric reflection: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
}

}  // namespace

void AugmentPolicy::validate() const {
    check_prob(flip_prob, "flip_prob");
    check_prob(blur_prob, "blur_prob");
    check_prob(channel_dropout_prob, "channel_dropout_prob");
    if (!(blur_strength_min >= 1.0) || !(blur_strength_max >= blur_strength_min))
        throw ConfigError("blur strength range must satisfy 1 <= min <= max");
    if (max_dropped_channels < 1) throw ConfigError("max_dropped_channels must be >= 1");
}

AugmentPolicy AugmentPolicy::none() {
    AugmentPolicy p;
    p.flip_prob = 0.0;
    p.rotate = false;
    p.blur_prob = 0.0;
    p.channel_dropout_prob = 0.0;
    return p;
}

AugmentPolicy AugmentPolicy::field_default() { return AugmentPolicy{}; }

AugmentPolicy AugmentPolicy::field_with_channel_dropout() {
    AugmentPolicy p;
    p.channel_dropout_prob = 0.25;
    return p;
}

MultispectralImage rotate90cw(const MultispectralImage& img, int quarter_turns) {
    img.validate();
    int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return img;
    if (img.height != img.width && (q == 1 || q == 3))
        throw ShapeError("quarter-turn rotation requires a square image");
    MultispectralImage out = MultispectralImage::zeros(img.channels, img.height, img.width);
    out.band_names = img.band_names;
    const int n = img.height;
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                // one clockwise quarter turn: out(y, x) = in(n-1-x, y)
                double v;
                switch (q) {
                    case 1: v = img.at(c, n - 1 - x, y); break;
                    case 2: v = img.at(c, n - 1 - y, n - 1 - x); break;
                    default: v = img.at(c, x, n - 1 - y); break;
                }
                out.at(c, y, x) = v;
            }
    return out;
}

MultispectralImage mirror_horizontal(const MultispectralImage& img) {
    img.validate();
    MultispectralImage out = img;
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

std::array<MultispectralImage, 8> dihedral_variants(const MultispectralImage& img) {
    img.validate();
    if (img.height != img.width) throw ShapeError("dihedral variants require a square image");
    std::array<MultispectralImage, 8> out{};
    for (int k = 0; k < 4; ++k) out[std::size_t(k)] = rotate90cw(img, k);
    for (int k = 0; k < 4; ++k) out[std::size_t(4 + k)] = mirror_horizontal(out[std::size_t(k)]);
    return out;
}

MultispectralImage rotate_bilinear(const MultispectralImage& img, double angle_rad) {
    img.validate();
    MultispectralImage out = MultispectralImage::zeros(img.channels, img.height, img.width);
    out.band_names = img.band_names;
    const double cy = (img.height - 1) / 2.0;
    const double cx = (img.width - 1) / 2.0;
    const double cos_a = std::cos(angle_rad);
    const double sin_a = std::sin(angle_rad);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // inverse mapping of a rotation by angle_rad about the center
            double xr = double(x) - cx;
            double yr = double(y) - cy;
            double xs = cos_a * xr + sin_a * yr + cx;
            double ys = -sin_a * xr + cos_a * yr + cy;
            int x0 = int(std::floor(xs));
            int y0 = int(std::floor(ys));
            double fx = xs - double(x0);
            double fy = ys - double(y0);
            int x0r = reflect_index(x0, img.width);
            int x1r = reflect_index(x0 + 1, img.width);
            int y0r = reflect_index(y0, img.height);
            int y1r = reflect_index(y0 + 1, img.height);
            for (int c = 0; c < img.channels; ++c) {
                double v00 = img.at(c, y0r, x0r);
                double v01 = img.at(c, y0r, x1r);
                double v10 = img.at(c, y1r, x0r);
                double v11 = img.at(c, y1r, x1r);
                out.at(c, y, x) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

MultispectralImage gaussian_blur(const MultispectralImage& img, double sigma_px) {
    img.validate();
    if (!(sigma_px > 0.0)) throw ConfigError("blur sigma must be positive");
    const int radius = std::max(1, int(std::ceil(3.0 * sigma_px)));
    std::vector<double> kernel(std::size_t(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * double(i) * double(i) / (sigma_px * sigma_px));
        kernel[std::size_t(i + radius)] = w;
        sum += w;
    }
    for (double& w : kernel) w /= sum;

    MultispectralImage tmp = img;
    MultispectralImage out = img;
    // horizontal then vertical pass, symmetric reflection at the borders
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[std::size_t(i + radius)] * img.at(c, y, reflect_index(x + i, img.width));
                tmp.at(c, y, x) = acc;
            }
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[std::size_t(i + radius)] * tmp.at(c, reflect_index(y + i, img.height), x);
                out.at(c, y, x) = acc;
            }
    }
    return out;
}

MultispectralImage augment_train(const MultispectralImage& img, const AugmentPolicy& policy,
                                 std::uint64_t rng_seed) {
    img.validate();
    policy.validate();
    if (policy.blur_prob > 0.0 && policy.blur_strength_max >= double(std::min(img.height, img.width)))
        throw ConfigError("blur strength range exceeds image size");
    Rng rng(rng_seed);
    MultispectralImage out = img;

    if (policy.flip_prob > 0.0 && rng.bernoulli(policy.flip_prob)) {
        // the flip axis is unspecified upstream; pick one uniformly
        if (rng.uniform_index(2) == 0) {
            out = mirror_horizontal(out);
        } else {
            MultispectralImage flipped = out;
            for (int c = 0; c < out.channels; ++c)
                for (int y = 0; y < out.height; ++y)
                    for (int x = 0; x < out.width; ++x) flipped.at(c, y, x) = out.at(c, out.height - 1 - y, x);
            out = std::move(flipped);
        }
    }
    if (policy.rotate) out = rotate_bilinear(out, rng.uniform(0.0, 2.0 * 3.14159265358979323846));
    if (policy.blur_prob > 0.0 && rng.bernoulli(policy.blur_prob))
        out = gaussian_blur(out, rng.uniform(policy.blur_strength_min, policy.blur_strength_max));
    if (policy.channel_dropout_prob > 0.0 && rng.bernoulli(policy.channel_dropout_prob)) {
        int max_drop = std::min(policy.max_dropped_channels, img.channels - 1);
        if (max_drop >= 1) {
            int count = 1 + int(rng.uniform_index(std::size_t(max_drop)));
            std::vector<int> chans(std::size_t(img.channels));
            std::iota(chans.begin(), chans.end(), 0);
            for (int i = 0; i < count; ++i) {
                std::size_t j = std::size_t(i) + rng.uniform_index(chans.size() - std::size_t(i));
                std::swap(chans[std::size_t(i)], chans[j]);
            }
            for (int i = 0; i < count; ++i) {
                int c = chans[std::size_t(i)];
                std::fill_n(out.data.begin() + std::ptrdiff_t(std::size_t(c) * out.pixel_count()),
                            std::ptrdiff_t(out.pixel_count()), 0.0);
            }
        }
    }
    return out;
}

}  // namespace dldl
