#include "dldl/optim.hpp"

#include <cmath>

namespace dldl {

AdamW::AdamW(std::vector<ParamRef> refs, AdamWConfig cfg) : refs_(std::move(refs)), cfg_(cfg) {
    m_.reserve(refs_.size());
    v_.reserve(refs_.size());
    for (const auto& r : refs_) {
        m_.emplace_back(r.size, 0.0);
        v_.emplace_back(r.size, 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < refs_.size(); ++i) {
        const auto& r = refs_[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < r.size; ++j) {
            double g = r.grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            r.value[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * r.value[j]);
        }
    }
}

double lr_at(long step, const CyclicLRConfig& cfg) {
    if (step < 0) throw ConfigError("lr_at: step must be non-negative");
    if (cfg.step_size < 1) throw ConfigError("cyclic LR step size must be >= 1");
    double cycle = std::floor(1.0 + double(step) / (2.0 * double(cfg.step_size)));
    double x = double(step) / double(cfg.step_size) - 2.0 * cycle + 1.0;
    double scale = std::max(0.0, 1.0 - std::abs(x));
    double amplitude = cfg.max_lr - cfg.base_lr;
    if (cfg.mode == CyclicMode::kExpRange) amplitude *= std::pow(cfg.gamma, double(step));
    return cfg.base_lr + amplitude * scale;
}

}  // namespace dldl
