#pragma once

// AdamW with global-norm gradient clipping and a warmup + cosine schedule.

#include <cstddef>
#include <vector>

#include "resattn/network.hpp"

namespace resattn {

struct OptimizerHyper {
    double peak_lr = 3e-3;
    double min_lr = 3e-4;
    std::size_t warmup_steps = 100;
    std::size_t total_steps = 1000;
    double weight_decay = 0.1;
    double grad_clip = 1.0;  // <= 0 disables clipping
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

// Linear warmup to peak_lr, then cosine decay to min_lr at total_steps.
double learning_rate(const OptimizerHyper& hyper, std::size_t step);

double global_norm(ModelParams& grads);
// Rescales grads so their global norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(ModelParams& grads, double max_norm);

class AdamW {
public:
    AdamW(const ModelParams& params, OptimizerHyper hyper);

    // One update in place; grads may be clipped in place. Returns the learning rate used.
    double step(ModelParams& params, ModelParams& grads);
    std::size_t steps_taken() const { return t_; }

private:
    OptimizerHyper hyper_;
    std::size_t t_ = 0;
    ModelParams m_;
    ModelParams v_;
};

}  // namespace resattn
