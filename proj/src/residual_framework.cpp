#include "resattn/residual_framework.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace resattn {

namespace {

void require_same_dim(const Vector& a, const Vector& b, const char* what) {
    if (a.dim() != b.dim()) {
        throw std::invalid_argument(std::string(what) + ": dimension mismatch " + std::to_string(a.dim()) +
                                    " vs " + std::to_string(b.dim()));
    }
}

double log_cosh(double x) {
    const double ax = std::abs(x);
    return ax + std::log1p(std::exp(-2.0 * ax)) - std::numbers::ln2;
}

}  // namespace

OuterLoss OuterLoss::huber(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("Huber threshold must be positive");
    return {Kind::kHuber, c};
}

double outer_loss_value(const OuterLoss& loss, const Vector& pred, const Vector& v) {
    require_same_dim(pred, v, "outer_loss_value");
    double total = 0.0;
    for (std::size_t i = 0; i < v.dim(); ++i) {
        const double e = v[i] - pred[i];
        switch (loss.kind) {
            case OuterLoss::Kind::kL2:
                total += 0.5 * e * e;
                break;
            case OuterLoss::Kind::kHuber:
                total += std::abs(e) <= loss.c ? 0.5 * e * e : loss.c * (std::abs(e) - 0.5 * loss.c);
                break;
            case OuterLoss::Kind::kLogCosh:
                total += log_cosh(e);
                break;
        }
    }
    return total;
}

Vector pseudo_residual(const OuterLoss& loss, const Vector& pred, const Vector& v) {
    require_same_dim(pred, v, "pseudo_residual");
    Vector r = v - pred;
    switch (loss.kind) {
        case OuterLoss::Kind::kL2:
            break;
        case OuterLoss::Kind::kHuber:
            for (double& x : r.values()) x = clip(x, loss.c);
            break;
        case OuterLoss::Kind::kLogCosh:
            for (double& x : r.values()) x = std::tanh(x);
            break;
    }
    return r;
}

Matrix inner_update(InnerLoss loss, const Matrix& state, const Vector& k, const Vector& target, double rate,
                    double decay) {
    if (state.rows() != target.dim() || state.cols() != k.dim()) {
        throw std::invalid_argument("inner_update: state " + shape_string(state) + " vs k dim " +
                                    std::to_string(k.dim()) + ", target dim " + std::to_string(target.dim()));
    }
    if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("inner_update: rate outside [0, 1]");

    // decay * S (I - rate k k^T) + rate t k^T == decay * S + rate (t - decay * S k) k^T
    Vector u = target;
    if (loss == InnerLoss::kSquaredError) u -= decay * matvec(state, k);

    Matrix next(state.rows(), state.cols());
    for (std::size_t i = 0; i < state.rows(); ++i) {
        const double ui = rate * u[i];
        const auto in = state.row(i);
        auto out = next.row(i);
        for (std::size_t j = 0; j < state.cols(); ++j) out[j] = decay * in[j] + ui * k[j];
    }
    return next;
}

std::pair<StepOutput, DualState> unified_step(const OuterLoss& outer, InnerLoss inner, const DualState& state,
                                              const StepInput& in) {
    Vector r = pseudo_residual(outer, matvec(state.s, in.k), in.v);
    Matrix r_next = inner_update(inner, state.r, in.k, r, in.gamma, in.alpha);

    StepOutput out;
    out.base = in.alpha * matvec(state.s, in.q);
    out.correction = in.gamma * matvec(r_next, in.q);
    out.o = out.base + out.correction;
    out.r = std::move(r);

    Matrix s_next = inner_update(inner, state.s, in.k, in.v, in.beta, in.alpha);
    return {std::move(out), DualState{std::move(s_next), std::move(r_next)}};
}

}  // namespace resattn
