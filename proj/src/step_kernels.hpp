#pragma once

// Allocation-free forms of one recurrent step and its vector-Jacobian
// product. States are d_v x d_k row-major blocks; q and k have d_k entries,
// v has d_v. step() and step_backward() wrap these, and the network scan
// calls them directly on its flat buffers.

#include <cstddef>
#include <vector>

#include "resattn/variants.hpp"

namespace resattn::kernels {

struct StepView {
    const double* q;
    const double* k;
    const double* v;
    EffectiveGates g;
};

// Working vectors for one VariantConfig, reused across steps.
struct StepScratch {
    explicit StepScratch(const VariantConfig& cfg);

    std::vector<double> sq, p, e, r, dphi, dr, drn_k, w, z, dz, dsn_k, u, du, dp, rq;
    std::vector<double> drn;  // d_v x d_k
};

EffectiveGates effective_gates(const VariantConfig& cfg, double alpha, double beta, double gamma);

// silu (optional) then l2 normalization (optional), as preprocess_qk.
// sig, when given, receives sigmoid(raw) for the silu backward pass.
void preprocess(const VariantConfig& cfg, const double* raw, std::size_t n, double* out, double* sig = nullptr);

// Writes the next state and the output; base, correction and residual may
// be null. residual is only written for the residual kinds.
void step_forward(const VariantConfig& cfg, const double* s, const double* r, const StepView& in, double* s_next,
                  double* r_next, double* o, double* base, double* correction, double* residual, StepScratch& w);

// Gradients with respect to the effective gates.
struct GateGrads {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

// Overwrites ds, dr, dq, dk, dv. r_next is the correction state the step
// produced; ds_next and dr_next are the gradients flowing into it.
GateGrads step_backward(const VariantConfig& cfg, const double* s, const double* r, const StepView& in,
                        const double* r_next, const double* grad_o, const double* ds_next, const double* dr_next,
                        double* ds, double* dr, double* dq, double* dk, double* dv, StepScratch& w);

// Maps effective-gate gradients back to the raw alpha, beta, gamma inputs.
GateGrads input_gate_grads(const VariantConfig& cfg, const GateGrads& effective);

}  // namespace resattn::kernels
