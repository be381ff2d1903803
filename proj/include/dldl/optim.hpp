#pragma once

#include <vector>

#include "dldl/model.hpp"

namespace dldl {

struct AdamWConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

// Decoupled weight decay Adam over a fixed set of parameter references.
class AdamW {
public:
    AdamW(std::vector<ParamRef> refs, AdamWConfig cfg);

    void step(double lr);
    const std::vector<ParamRef>& refs() const { return refs_; }

private:
    std::vector<ParamRef> refs_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

enum class CyclicMode { kTriangular, kExpRange };

struct CyclicLRConfig {
    double base_lr = 5e-4;
    double max_lr = 1e-3;
    long step_size = 500;  // half period, steps up and down
    CyclicMode mode = CyclicMode::kExpRange;
    double gamma = 0.9999;
};

// Triangular wave between base and max; exp_range decays the amplitude by
// gamma^step. Continuous in the step count.
double lr_at(long step, const CyclicLRConfig& cfg);

}  // namespace dldl
