#include "resattn/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace resattn {

double learning_rate(const OptimizerHyper& hyper, std::size_t step) {
    if (hyper.warmup_steps > 0 && step < hyper.warmup_steps) {
        return hyper.peak_lr * static_cast<double>(step + 1) / static_cast<double>(hyper.warmup_steps);
    }
    if (step >= hyper.total_steps || hyper.total_steps <= hyper.warmup_steps) return hyper.min_lr;
    const double progress = static_cast<double>(step - hyper.warmup_steps) /
                            static_cast<double>(hyper.total_steps - hyper.warmup_steps);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return hyper.min_lr + (hyper.peak_lr - hyper.min_lr) * cosine;
}

double global_norm(ModelParams& grads) {
    double sq = 0.0;
    for (const auto& ref : param_refs(grads)) {
        for (double g : ref.values) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_global_norm(ModelParams& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& ref : param_refs(grads)) {
            for (double& g : ref.values) g *= scale;
        }
    }
    return norm;
}

AdamW::AdamW(const ModelParams& params, OptimizerHyper hyper)
    : hyper_(hyper), m_(zeros_like(params)), v_(zeros_like(params)) {}

double AdamW::step(ModelParams& params, ModelParams& grads) {
    if (hyper_.grad_clip > 0.0) clip_global_norm(grads, hyper_.grad_clip);
    const double lr = learning_rate(hyper_, t_);
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));

    auto p_refs = param_refs(params);
    auto g_refs = param_refs(grads);
    auto m_refs = param_refs(m_);
    auto v_refs = param_refs(v_);
    for (std::size_t i = 0; i < p_refs.size(); ++i) {
        auto p = p_refs[i].values;
        const auto g = g_refs[i].values;
        auto m = m_refs[i].values;
        auto v = v_refs[i].values;
        const double decay = p_refs[i].weight_decay ? hyper_.weight_decay : 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = hyper_.beta1 * m[j] + (1.0 - hyper_.beta1) * g[j];
            v[j] = hyper_.beta2 * v[j] + (1.0 - hyper_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * (mhat / (std::sqrt(vhat) + hyper_.eps) + decay * p[j]);
        }
    }
    return lr;
}

}  // namespace resattn
