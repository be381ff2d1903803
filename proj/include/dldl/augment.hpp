#pragma once

#include <array>

#include "dldl/image.hpp"

namespace dldl {

struct AugmentPolicy {
    double flip_prob = 0.25;
    bool rotate = true;                 // uniform random angle
    double blur_prob = 0.10;
    double blur_strength_min = 3.0;     // Gaussian sigma in pixels
    double blur_strength_max = 8.0;
    double channel_dropout_prob = 0.0;  // 0.25 when the dropout variant is on
    int max_dropped_channels = 3;

    void validate() const;

    static AugmentPolicy none();
    static AugmentPolicy field_default();               // flips + rotation + blur
    static AugmentPolicy field_with_channel_dropout();  // adds 25 % dropout of up to 3 channels
};

// Flip, rotation (bilinear, reflect padding), Gaussian blur, channel dropout,
// each gated by the policy. Deterministic under the seed; shape preserved.
MultispectralImage augment_train(const MultispectralImage& img, const AugmentPolicy& policy,
                                 std::uint64_t rng_seed);

// Exact right-angle helpers (no resampling).
MultispectralImage rotate90cw(const MultispectralImage& img, int quarter_turns);
MultispectralImage mirror_horizontal(const MultispectralImage& img);

// The 8 dihedral-group variants of a square image, fixed order:
// index k in 0..3 is k clockwise quarter turns of the original,
// index 4+k is the left-right mirror of index k. Index 0 is the original.
std::array<MultispectralImage, 8> dihedral_variants(const MultispectralImage& img);

// Arbitrary-angle rotation, bilinear resampling with symmetric reflection.
MultispectralImage rotate_bilinear(const MultispectralImage& img, double angle_rad);

MultispectralImage gaussian_blur(const MultispectralImage& img, double sigma_px);

}  // namespace dldl
