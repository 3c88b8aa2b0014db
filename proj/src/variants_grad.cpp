#include "resattn/variants.hpp"
#include "step_kernels.hpp"

namespace resattn {

StepBackward step_backward(const VariantConfig& cfg, const DualState& prev, const StepInput& in,
                           const DualState& next, const Vector& grad_o, const DualState& grad_next) {
    const kernels::StepView view{in.q.values().data(), in.k.values().data(), in.v.values().data(),
                                 effective_gates(cfg, in)};
    kernels::StepScratch scratch(cfg);
    StepBackward res;
    res.input.q = Vector(cfg.d_k);
    res.input.k = Vector(cfg.d_k);
    res.input.v = Vector(cfg.d_v);
    res.state = DualState::zeros(cfg);
    const kernels::GateGrads d = kernels::step_backward(
        cfg, prev.s.values().data(), prev.r.values().data(), view, next.r.values().data(), grad_o.values().data(),
        grad_next.s.values().data(), grad_next.r.values().data(), res.state.s.values().data(),
        res.state.r.values().data(), res.input.q.values().data(), res.input.k.values().data(),
        res.input.v.values().data(), scratch);
    const kernels::GateGrads g = kernels::input_gate_grads(cfg, d);
    res.input.alpha = g.alpha;
    res.input.beta = g.beta;
    res.input.gamma = g.gamma;
    return res;
}

}  // namespace resattn
