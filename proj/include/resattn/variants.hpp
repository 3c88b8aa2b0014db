#pragma once

// Single-step and full-sequence reference recurrences for the linear
// attention family and its residual-fitting extensions.
//
// Every step reports its output split into a base prediction read from the
// pre-update state and a correction term, with o == base + correction.
//
//   kind          state update                            output
//   LinearAttn    S = S + v k^T                             S q + (v k^T) q
//   Mamba2        S = a S + v k^T                           a S q + (v k^T) q
//   SGLA          S = a S + b v k^T                         a S q + b (v k^T) q
//   DeltaNet      S = S (I - b k k^T) + b v k^T             S q + b ((v - S k) k^T) q
//   GatedDeltaNet S = a S (I - b k k^T) + b v k^T           a S q + b ((v - a S k) k^T) q
//   RLA           R = a R + g r k^T,  S = a S + b v k^T     a S q + g R q
//   RDN           delta-rule forms of the RLA updates       a S q + g R q
//   RLA_NoFit     R = r k^T (stateless), S as RLA           a S q + g R q
//
// with a, b, g the decay, update and correction gates and
// r = clip(v - S k) the residual of the base state. S and R on the right
// hand sides are the pre-update states.

#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "resattn/core_math.hpp"

namespace resattn {

enum class VariantKind { kLinearAttn, kMamba2, kSGLA, kDeltaNet, kGatedDeltaNet, kRLA, kRDN, kRLANoFit };

inline constexpr VariantKind kAllVariantKinds[] = {
    VariantKind::kLinearAttn, VariantKind::kMamba2, VariantKind::kSGLA, VariantKind::kDeltaNet,
    VariantKind::kGatedDeltaNet, VariantKind::kRLA, VariantKind::kRDN, VariantKind::kRLANoFit};

// The prediction/correction rows whose output equals S_t q_t.
inline constexpr VariantKind kDecomposableKinds[] = {VariantKind::kLinearAttn, VariantKind::kMamba2,
                                                     VariantKind::kSGLA, VariantKind::kDeltaNet,
                                                     VariantKind::kGatedDeltaNet};

std::string_view variant_name(VariantKind kind);
std::optional<VariantKind> parse_variant(std::string_view name);
bool is_residual_kind(VariantKind kind);
bool is_delta_kind(VariantKind kind);

// How the raw residual v - S k is squashed before it is fitted.
enum class ResidualSquash {
    kClip,  // clip to [-c, c] when clip_c is set (Huber pseudo-residual)
    kTanh,  // tanh (log-cosh pseudo-residual); ignores clip_c
};

// What the RLA_NoFit ablation uses as its stateless correction state.
enum class StatelessCorrection {
    kResidual,  // R_t = r_t k_t^T
    kValue,     // R_t = v_t k_t^T, the plain linear attention correction
};

struct VariantConfig {
    VariantKind kind = VariantKind::kRLA;
    std::size_t d_k = 0;
    std::size_t d_v = 0;
    std::optional<double> clip_c = 1.0;
    bool use_l2_norm = true;
    bool use_silu = true;
    bool tie_gamma_to_beta = false;
    bool gated_output = true;
    ResidualSquash squash = ResidualSquash::kClip;
    StatelessCorrection nofit_correction = StatelessCorrection::kResidual;

    void validate() const;
};

struct StepInput {
    Vector q;
    Vector k;
    Vector v;
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
};

struct DualState {
    Matrix s;
    Matrix r;

    static DualState zeros(const VariantConfig& cfg);
};

struct StepOutput {
    Vector o;
    std::optional<Vector> r;
    Vector base;
    Vector correction;
};

// The gate values a step actually uses once kind-specific pinning
// (e.g. no decay for LinearAttn) and gamma/beta tying are applied.
struct EffectiveGates {
    double alpha;
    double beta;
    double gamma;
};

EffectiveGates effective_gates(const VariantConfig& cfg, const StepInput& in);

// clip(v - S k) when clip_c is set, else v - S k.
Vector residual(const Matrix& s, const Vector& k, const Vector& v, std::optional<double> clip_c);

// Squashed residual according to cfg (clip or tanh).
Vector pseudo_residual_for(const VariantConfig& cfg, const Matrix& s, const Vector& k, const Vector& v);

std::pair<Vector, Vector> preprocess_qk(const VariantConfig& cfg, const Vector& q, const Vector& k);

std::pair<StepOutput, DualState> step(const VariantConfig& cfg, const DualState& state, const StepInput& in);

struct ScanResult {
    std::vector<StepOutput> outputs;
    DualState final_state;
};

ScanResult scan(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq);

// max_t |base_t + correction_t - S_t q_t| for one of the decomposable kinds.
double decomposition_identity(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq);

// Vector-Jacobian product of one step.
struct StepInputGrad {
    Vector q;
    Vector k;
    Vector v;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

struct StepBackward {
    StepInputGrad input;
    DualState state;  // gradient with respect to the pre-step state
};

// `next` must be the state returned by step(cfg, prev, in). Clip uses
// derivative 1 on the closed interval [-c, c] and 0 outside.
StepBackward step_backward(const VariantConfig& cfg, const DualState& prev, const StepInput& in,
                           const DualState& next, const Vector& grad_o, const DualState& grad_next);

}  // namespace resattn
