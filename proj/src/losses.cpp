#include "dldl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dldl {

namespace {

void require_same_space(const LabelDistribution& a, const LabelDistribution& b) {
    if (!(a.space == b.space)) throw ShapeError("label distributions live on different spaces");
}

struct Moments {
    double mu = 0.0;
    double var = 0.0;
};

Moments moments(const std::vector<double>& pmf, const LabelSpace& space) {
    Moments m;
    for (int i = 0; i < space.num_bins; ++i) m.mu += space.center(i) * pmf[std::size_t(i)];
    for (int i = 0; i < space.num_bins; ++i) {
        double d = space.center(i) - m.mu;
        m.var += d * d * pmf[std::size_t(i)];
    }
    m.var = std::max(m.var, 0.0);
    return m;
}

// One-bin shift toward higher bins, lowest bin replicated, renormalized.
std::vector<double> shifted_renormalized(const std::vector<double>& q) {
    const std::size_t k = q.size();
    std::vector<double> s(k);
    s[0] = q[0];
    for (std::size_t i = 1; i < k; ++i) s[i] = q[i - 1];
    double z = 0.0;
    for (double v : s) z += v;
    for (double& v : s) v /= z;
    return s;
}

double kld(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) acc += p[i] * (std::log(p[i]) - std::log(q[i]));
    return acc;
}

double expectation_loss_value(const Moments& t, const Moments& p) {
    if (!(p.var > 0.0)) throw NumericError("degenerate prediction: zero spread after flooring");
    if (!(t.var > 0.0)) throw NumericError("degenerate truth: zero spread after flooring");
    return 0.5 * std::log(p.var) - 0.5 * std::log(t.var) - 0.5 +
           (t.var + (p.mu - t.mu) * (p.mu - t.mu)) / (2.0 * p.var);
}

double smoothness_value(const std::vector<double>& q) {
    std::vector<double> r = shifted_renormalized(q);
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
        acc += 0.5 * (q[i] - r[i]) * (std::log(q[i]) - std::log(r[i]));
    return acc;
}

// Softmax with floored renormalization and its backward chain.
struct FlooredSoftmax {
    std::vector<double> p;  // softmax(z)
    std::vector<double> q;  // floor_renormalize(p)

    static FlooredSoftmax forward(const std::vector<double>& z) {
        FlooredSoftmax fs;
        const std::size_t k = z.size();
        fs.p.resize(k);
        double zmax = -std::numeric_limits<double>::infinity();
        for (double v : z) zmax = std::max(zmax, v);
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            fs.p[i] = std::exp(z[i] - zmax);
            sum += fs.p[i];
        }
        for (double& v : fs.p) v /= sum;
        fs.q = floor_renormalize(fs.p);
        return fs;
    }

    std::vector<double> backward(const std::vector<double>& g_q) const {
        const std::size_t k = p.size();
        // q = m / sum(m), m_i = max(p_i, eps)
        double zm = 0.0;
        for (std::size_t i = 0; i < k; ++i) zm += std::max(p[i], kPmfFloor);
        double dot_q = 0.0;
        for (std::size_t i = 0; i < k; ++i) dot_q += g_q[i] * q[i];
        std::vector<double> g_p(k);
        for (std::size_t i = 0; i < k; ++i)
            g_p[i] = p[i] > kPmfFloor ? (g_q[i] - dot_q) / zm : 0.0;
        // softmax backward
        double dot_p = 0.0;
        for (std::size_t i = 0; i < k; ++i) dot_p += g_p[i] * p[i];
        std::vector<double> g_z(k);
        for (std::size_t i = 0; i < k; ++i) g_z[i] = p[i] * (g_p[i] - dot_p);
        return g_z;
    }
};

std::vector<double> grad_ld_wrt_q(const std::vector<double>& truth_floored, const std::vector<double>& q) {
    std::vector<double> g(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) g[i] = -truth_floored[i] / q[i];
    return g;
}

std::vector<double> grad_exp_wrt_q(const Moments& t, const std::vector<double>& q, const LabelSpace& space) {
    Moments p = moments(q, space);
    if (!(p.var > 0.0)) throw NumericError("degenerate prediction: zero spread after flooring");
    double d_mu = (p.mu - t.mu) / p.var;
    double d_var = 0.5 / p.var - (t.var + (p.mu - t.mu) * (p.mu - t.mu)) / (2.0 * p.var * p.var);
    std::vector<double> g(q.size());
    for (int i = 0; i < space.num_bins; ++i) {
        double c = space.center(i);
        g[std::size_t(i)] = d_mu * c + d_var * (c * c - 2.0 * p.mu * c);
    }
    return g;
}

std::vector<double> grad_smooth_wrt_q(const std::vector<double>& q) {
    const std::size_t k = q.size();
    std::vector<double> s(k);
    s[0] = q[0];
    for (std::size_t i = 1; i < k; ++i) s[i] = q[i - 1];
    double zs = 0.0;
    for (double v : s) zs += v;
    std::vector<double> r(k);
    for (std::size_t i = 0; i < k; ++i) r[i] = s[i] / zs;

    std::vector<double> g_q(k, 0.0);
    std::vector<double> g_r(k);
    for (std::size_t i = 0; i < k; ++i) {
        double dlog = std::log(q[i]) - std::log(r[i]);
        g_q[i] += 0.5 * (dlog + (q[i] - r[i]) / q[i]);
        g_r[i] = 0.5 * (-dlog - (q[i] - r[i]) / r[i]);
    }
    // r = s / sum(s)
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += g_r[i] * r[i];
    std::vector<double> g_s(k);
    for (std::size_t i = 0; i < k; ++i) g_s[i] = (g_r[i] - dot) / zs;
    // s = [q0, q0, q1, ..., q_{k-2}]
    g_q[0] += g_s[0] + g_s[1];
    for (std::size_t j = 1; j + 1 < k; ++j) g_q[j] += g_s[j + 1];
    return g_q;
}

}  // namespace

std::vector<double> floor_renormalize(const std::vector<double>& pmf, double eps) {
    std::vector<double> out(pmf.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pmf.size(); ++i) {
        out[i] = std::max(pmf[i], eps);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double loss_label_distribution(const LabelDistribution& truth, const LabelDistribution& pred) {
    require_same_space(truth, pred);
    return kld(floor_renormalize(truth.pmf), floor_renormalize(pred.pmf));
}

double loss_expectation(const LabelDistribution& truth, const LabelDistribution& pred) {
    require_same_space(truth, pred);
    Moments t = moments(floor_renormalize(truth.pmf), truth.space);
    Moments p = moments(floor_renormalize(pred.pmf), pred.space);
    return expectation_loss_value(t, p);
}

double loss_smoothness(const LabelDistribution& pred) {
    return smoothness_value(floor_renormalize(pred.pmf));
}

LossBreakdown total_loss(const LabelDistribution& truth, const LabelDistribution& pred) {
    LossBreakdown b;
    b.label_dist = loss_label_distribution(truth, pred);
    b.expectation_value = loss_expectation(truth, pred);
    b.smoothness = loss_smoothness(pred);
    b.total = b.label_dist + b.expectation_value + b.smoothness;
    return b;
}

std::vector<double> softmax_floored(const std::vector<double>& logits, double eps) {
    const std::size_t k = logits.size();
    std::vector<double> p(k);
    double zmax = -std::numeric_limits<double>::infinity();
    for (double v : logits) zmax = std::max(zmax, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp(logits[i] - zmax);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return floor_renormalize(p, eps);
}

LossWithGrad loss_label_distribution_logits(const std::vector<double>& logits, const LabelDistribution& truth) {
    if (logits.size() != truth.pmf.size()) throw ShapeError("logit count does not match label space");
    auto fs = FlooredSoftmax::forward(logits);
    std::vector<double> t = floor_renormalize(truth.pmf);
    LossWithGrad out;
    out.value = kld(t, fs.q);
    out.d_logits = fs.backward(grad_ld_wrt_q(t, fs.q));
    return out;
}

LossWithGrad loss_expectation_logits(const std::vector<double>& logits, const LabelDistribution& truth) {
    if (logits.size() != truth.pmf.size()) throw ShapeError("logit count does not match label space");
    auto fs = FlooredSoftmax::forward(logits);
    Moments t = moments(floor_renormalize(truth.pmf), truth.space);
    Moments p = moments(fs.q, truth.space);
    LossWithGrad out;
    out.value = expectation_loss_value(t, p);
    out.d_logits = fs.backward(grad_exp_wrt_q(t, fs.q, truth.space));
    return out;
}

LossWithGrad loss_smoothness_logits(const std::vector<double>& logits, const LabelSpace& space) {
    if (logits.size() != static_cast<std::size_t>(space.num_bins))
        throw ShapeError("logit count does not match label space");
    auto fs = FlooredSoftmax::forward(logits);
    LossWithGrad out;
    out.value = smoothness_value(fs.q);
    out.d_logits = fs.backward(grad_smooth_wrt_q(fs.q));
    return out;
}

TotalLossWithGrad total_loss_logits(const std::vector<double>& logits, const LabelDistribution& truth) {
    if (logits.size() != truth.pmf.size()) throw ShapeError("logit count does not match label space");
    auto fs = FlooredSoftmax::forward(logits);
    std::vector<double> t = floor_renormalize(truth.pmf);
    Moments tm = moments(t, truth.space);

    TotalLossWithGrad out;
    out.value.label_dist = kld(t, fs.q);
    out.value.expectation_value = expectation_loss_value(tm, moments(fs.q, truth.space));
    out.value.smoothness = smoothness_value(fs.q);
    out.value.total = out.value.label_dist + out.value.expectation_value + out.value.smoothness;

    std::vector<double> g_q = grad_ld_wrt_q(t, fs.q);
    std::vector<double> g_exp = grad_exp_wrt_q(tm, fs.q, truth.space);
    std::vector<double> g_sm = grad_smooth_wrt_q(fs.q);
    for (std::size_t i = 0; i < g_q.size(); ++i) g_q[i] += g_exp[i] + g_sm[i];
    out.d_logits = fs.backward(g_q);
    return out;
}

double mdo(const std::vector<LabelDistribution>& truths, const std::vector<LabelDistribution>& preds) {
    if (truths.empty()) throw DataError("mdo: empty batch");
    if (truths.size() != preds.size()) throw ShapeError("mdo: batch size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        require_same_space(truths[i], preds[i]);
        double overlap = 0.0;
        for (std::size_t j = 0; j < truths[i].pmf.size(); ++j)
            overlap += std::min(truths[i].pmf[j], preds[i].pmf[j]);
        acc += overlap;
    }
    return acc / double(truths.size());
}

double mae(const std::vector<LabelDistribution>& truths, const std::vector<LabelDistribution>& preds) {
    if (truths.empty()) throw DataError("mae: empty batch");
    if (truths.size() != preds.size()) throw ShapeError("mae: batch size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        require_same_space(truths[i], preds[i]);
        acc += std::abs(expectation(truths[i]) - expectation(preds[i]));
    }
    return acc / double(truths.size());
}

}  // namespace dldl
