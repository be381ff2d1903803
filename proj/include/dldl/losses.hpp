#pragma once

#include <vector>

#include "dldl/labelspace.hpp"

namespace dldl {

// All pmfs entering a log are floored here and renormalized.
constexpr double kPmfFloor = 1e-12;

std::vector<double> floor_renormalize(const std::vector<double>& pmf, double eps = kPmfFloor);

struct LossBreakdown {
    double label_dist = 0.0;
    double expectation_value = 0.0;
    double smoothness = 0.0;
    double total = 0.0;
};

// Discrete KLD(truth || pred), both floored.
double loss_label_distribution(const LabelDistribution& truth, const LabelDistribution& pred);

// KLD of the two distributions treated as normals via their first two moments.
double loss_expectation(const LabelDistribution& truth, const LabelDistribution& pred);

// Symmetric KLD between the prediction and its one-bin shift toward higher
// bins (lowest bin replicated, then renormalized).
double loss_smoothness(const LabelDistribution& pred);

LossBreakdown total_loss(const LabelDistribution& truth, const LabelDistribution& pred);

// Training path: losses evaluated on softmax(logits) with the same flooring,
// with analytic gradients w.r.t. the logits.
struct LossWithGrad {
    double value = 0.0;
    std::vector<double> d_logits;
};

LossWithGrad loss_label_distribution_logits(const std::vector<double>& logits, const LabelDistribution& truth);
LossWithGrad loss_expectation_logits(const std::vector<double>& logits, const LabelDistribution& truth);
LossWithGrad loss_smoothness_logits(const std::vector<double>& logits, const LabelSpace& space);

struct TotalLossWithGrad {
    LossBreakdown value;
    std::vector<double> d_logits;
};

TotalLossWithGrad total_loss_logits(const std::vector<double>& logits, const LabelDistribution& truth);

// pmf over the floored softmax of the logits, as the losses see it.
std::vector<double> softmax_floored(const std::vector<double>& logits, double eps = kPmfFloor);

// Mean distribution overlap over a batch, in [0,1].
double mdo(const std::vector<LabelDistribution>& truths, const std::vector<LabelDistribution>& preds);

// Mean absolute difference of distribution expectations.
double mae(const std::vector<LabelDistribution>& truths, const std::vector<LabelDistribution>& preds);

}  // namespace dldl
