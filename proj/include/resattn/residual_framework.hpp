#pragma once

// Online gradient boosting view of residual linear attention: an outer loss
// defines the pseudo-residual the auxiliary state fits, an inner loss defines
// how each state takes its gradient step.

#include <utility>

#include "resattn/variants.hpp"

namespace resattn {

struct OuterLoss {
    enum class Kind { kL2, kHuber, kLogCosh };
    Kind kind = Kind::kL2;
    double c = 0.0;  // Huber threshold

    static OuterLoss l2() { return {Kind::kL2, 0.0}; }
    static OuterLoss huber(double c);
    static OuterLoss log_cosh() { return {Kind::kLogCosh, 0.0}; }
};

enum class InnerLoss {
    kInnerProduct,  // L = -<S k, target>
    kSquaredError,  // L = 0.5 ||S k - target||^2
};

// Summed scalar loss between a prediction and its target.
double outer_loss_value(const OuterLoss& loss, const Vector& pred, const Vector& v);

// Negative gradient of the outer loss with respect to the prediction.
// Huber uses the clipped residual, which takes the value +-c on the corner.
Vector pseudo_residual(const OuterLoss& loss, const Vector& pred, const Vector& v);

// One gradient step of the inner loss on decay * state with step size rate.
Matrix inner_update(InnerLoss loss, const Matrix& state, const Vector& k, const Vector& target, double rate,
                    double decay = 1.0);

// r = pseudo-residual of S k against v, R fitted to r at rate gamma,
// S fitted to v at rate beta, both decayed by alpha; output
// alpha S q + gamma R_t q. Gates equal to one give the ungated recurrence.
std::pair<StepOutput, DualState> unified_step(const OuterLoss& outer, InnerLoss inner, const DualState& state,
                                              const StepInput& in);

}  // namespace resattn
