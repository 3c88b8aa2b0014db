#include "resattn/variants.hpp"

#include "step_kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace resattn {

namespace {

struct NamedKind {
    VariantKind kind;
    std::string_view name;
};

constexpr NamedKind kNames[] = {
    {VariantKind::kLinearAttn, "linear_attn"},
    {VariantKind::kMamba2, "mamba2"},
    {VariantKind::kSGLA, "sgla"},
    {VariantKind::kDeltaNet, "deltanet"},
    {VariantKind::kGatedDeltaNet, "gated_deltanet"},
    {VariantKind::kRLA, "rla"},
    {VariantKind::kRDN, "rdn"},
    {VariantKind::kRLANoFit, "rla_nofit"},
};

void check_gate(double g, const char* name) {
    if (!(g >= 0.0 && g <= 1.0)) {
        throw std::invalid_argument(std::string("gate ") + name + " = " + std::to_string(g) +
                                    " outside [0, 1]");
    }
}

void check_shapes(const VariantConfig& cfg, const DualState& state, const StepInput& in) {
    auto fail = [&](const std::string& what) {
        throw std::invalid_argument("step(" + std::string(variant_name(cfg.kind)) + "): " + what);
    };
    if (in.q.dim() != cfg.d_k || in.k.dim() != cfg.d_k) {
        fail("q/k dims " + std::to_string(in.q.dim()) + "/" + std::to_string(in.k.dim()) + " vs d_k " +
             std::to_string(cfg.d_k));
    }
    if (in.v.dim() != cfg.d_v) {
        fail("v dim " + std::to_string(in.v.dim()) + " vs d_v " + std::to_string(cfg.d_v));
    }
    if (state.s.rows() != cfg.d_v || state.s.cols() != cfg.d_k) fail("S is " + shape_string(state.s));
    if (state.r.rows() != cfg.d_v || state.r.cols() != cfg.d_k) fail("R is " + shape_string(state.r));
    check_gate(in.alpha, "alpha");
    check_gate(in.beta, "beta");
    check_gate(in.gamma, "gamma");
}

}  // namespace

std::string_view variant_name(VariantKind kind) {
    for (const auto& n : kNames) {
        if (n.kind == kind) return n.name;
    }
    throw std::invalid_argument("unknown variant kind");
}

std::optional<VariantKind> parse_variant(std::string_view name) {
    for (const auto& n : kNames) {
        if (n.name == name) return n.kind;
    }
    return std::nullopt;
}

bool is_residual_kind(VariantKind kind) {
    return kind == VariantKind::kRLA || kind == VariantKind::kRDN || kind == VariantKind::kRLANoFit;
}

bool is_delta_kind(VariantKind kind) {
    return kind == VariantKind::kDeltaNet || kind == VariantKind::kGatedDeltaNet || kind == VariantKind::kRDN;
}

void VariantConfig::validate() const {
    if (d_k == 0 || d_v == 0) throw std::invalid_argument("VariantConfig: d_k and d_v must be positive");
    if (clip_c && !(*clip_c > 0.0)) throw std::invalid_argument("VariantConfig: clip threshold must be positive");
    bool known = false;
    for (auto k : kAllVariantKinds) known = known || k == kind;
    if (!known) throw std::invalid_argument("VariantConfig: unknown variant kind");
}

DualState DualState::zeros(const VariantConfig& cfg) {
    return DualState{Matrix(cfg.d_v, cfg.d_k), Matrix(cfg.d_v, cfg.d_k)};
}

EffectiveGates effective_gates(const VariantConfig& cfg, const StepInput& in) {
    return kernels::effective_gates(cfg, in.alpha, in.beta, in.gamma);
}

Vector residual(const Matrix& s, const Vector& k, const Vector& v, std::optional<double> clip_c) {
    if (s.rows() != v.dim() || s.cols() != k.dim()) {
        throw std::invalid_argument("residual: state " + shape_string(s) + " vs k dim " + std::to_string(k.dim()) +
                                    ", v dim " + std::to_string(v.dim()));
    }
    Vector r = v - matvec(s, k);
    if (clip_c) {
        if (!(*clip_c > 0.0)) throw std::invalid_argument("residual: clip threshold must be positive");
        for (double& x : r.values()) x = clip(x, *clip_c);
    }
    return r;
}

Vector pseudo_residual_for(const VariantConfig& cfg, const Matrix& s, const Vector& k, const Vector& v) {
    if (cfg.squash == ResidualSquash::kTanh) {
        Vector r = residual(s, k, v, std::nullopt);
        for (double& x : r.values()) x = std::tanh(x);
        return r;
    }
    return residual(s, k, v, cfg.clip_c);
}

std::pair<Vector, Vector> preprocess_qk(const VariantConfig& cfg, const Vector& q, const Vector& k) {
    Vector qo(q.dim());
    Vector ko(k.dim());
    kernels::preprocess(cfg, q.values().data(), q.dim(), qo.values().data());
    kernels::preprocess(cfg, k.values().data(), k.dim(), ko.values().data());
    return {std::move(qo), std::move(ko)};
}

std::pair<StepOutput, DualState> step(const VariantConfig& cfg, const DualState& state, const StepInput& in) {
    check_shapes(cfg, state, in);
    const kernels::StepView view{in.q.values().data(), in.k.values().data(), in.v.values().data(),
                                 effective_gates(cfg, in)};
    kernels::StepScratch scratch(cfg);
    DualState next = DualState::zeros(cfg);
    StepOutput out{Vector(cfg.d_v), std::nullopt, Vector(cfg.d_v), Vector(cfg.d_v)};
    const bool residual = is_residual_kind(cfg.kind);
    if (residual) out.r = Vector(cfg.d_v);
    kernels::step_forward(cfg, state.s.values().data(), state.r.values().data(), view, next.s.values().data(),
                          next.r.values().data(), out.o.values().data(), out.base.values().data(),
                          out.correction.values().data(), residual ? out.r->values().data() : nullptr, scratch);
    return {std::move(out), std::move(next)};
}

ScanResult scan(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq) {
    ScanResult result{{}, init};
    result.outputs.reserve(seq.size());
    for (const auto& in : seq) {
        auto [out, next] = step(cfg, result.final_state, in);
        result.outputs.push_back(std::move(out));
        result.final_state = std::move(next);
    }
    return result;
}

double decomposition_identity(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq) {
    if (is_residual_kind(cfg.kind)) {
        throw std::invalid_argument("decomposition_identity: " + std::string(variant_name(cfg.kind)) +
                                    " keeps a persistent correction state; S_t q_t is not its output");
    }
    double worst = 0.0;
    DualState state = init;
    for (const auto& in : seq) {
        auto [out, next] = step(cfg, state, in);
        const Vector decomposed = out.base + out.correction;
        worst = std::max(worst, max_abs_diff(decomposed.values(), matvec(next.s, in.q).values()));
        state = std::move(next);
    }
    return worst;
}

}  // namespace resattn
