#include "step_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace resattn::kernels {

namespace {

using Span = std::span<const double>;

// y = m x
void matvec_into(const double* m, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t i = 0; i < rows; ++i) y[i] = dot(Span(m + i * cols, cols), Span(x, cols));
}

// acc += scale * m^T x
void add_matvec_t(double* acc, double scale, const double* m, std::size_t rows, std::size_t cols, const double* x) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double xi = scale * x[i];
        const double* row = m + i * cols;
        for (std::size_t j = 0; j < cols; ++j) acc[j] += xi * row[j];
    }
}

// m += scale * u w^T
void add_outer(double* m, std::size_t rows, std::size_t cols, double scale, const double* u, const double* w) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double ui = scale * u[i];
        double* row = m + i * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] += ui * w[j];
    }
}

// dst = a * src + (scale * u) w^T
void decay_and_write(double* dst, const double* src, std::size_t rows, std::size_t cols, double a, double scale,
                     const double* u, const double* w) {
    for (std::size_t i = 0; i < rows; ++i) {
        const double ui = scale * u[i];
        const double* in = src + i * cols;
        double* out = dst + i * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] = a * in[j] + ui * w[j];
    }
}

void add_scaled(double* acc, double scale, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += scale * x[i];
}

void zero(double* x, std::size_t n) { std::fill(x, x + n, 0.0); }

double squash(const VariantConfig& cfg, double e) {
    if (cfg.squash == ResidualSquash::kTanh) return std::tanh(e);
    if (cfg.clip_c) return clip(e, *cfg.clip_c);
    return e;
}

}  // namespace

StepScratch::StepScratch(const VariantConfig& cfg)
    : sq(cfg.d_v), p(cfg.d_v), e(cfg.d_v), r(cfg.d_v), dphi(cfg.d_v), dr(cfg.d_v), drn_k(cfg.d_v), w(cfg.d_v),
      z(cfg.d_v), dz(cfg.d_v), dsn_k(cfg.d_v), u(cfg.d_v), du(cfg.d_v), dp(cfg.d_v), rq(cfg.d_v),
      drn(cfg.d_v * cfg.d_k) {}

EffectiveGates effective_gates(const VariantConfig& cfg, double alpha, double beta, double gamma) {
    switch (cfg.kind) {
        case VariantKind::kLinearAttn:
            return {1.0, 1.0, 1.0};
        case VariantKind::kMamba2:
            return {alpha, 1.0, 1.0};
        case VariantKind::kDeltaNet:
            return {1.0, beta, 1.0};
        case VariantKind::kSGLA:
        case VariantKind::kGatedDeltaNet:
            return {alpha, beta, 1.0};
        case VariantKind::kRLA:
        case VariantKind::kRDN:
        case VariantKind::kRLANoFit:
            return {alpha, beta, cfg.tie_gamma_to_beta ? beta : gamma};
    }
    throw std::invalid_argument("unknown variant kind");
}

void preprocess(const VariantConfig& cfg, const double* raw, std::size_t n, double* out, double* sig) {
    for (std::size_t i = 0; i < n; ++i) {
        if (cfg.use_silu) {
            if (!std::isfinite(raw[i])) throw std::domain_error("non-finite input to elementwise nonlinearity");
            const double s = sigmoid(raw[i]);
            out[i] = raw[i] * s;
            if (sig) sig[i] = s;
        } else {
            out[i] = raw[i];
        }
    }
    if (cfg.use_l2_norm) {
        const double denom = std::max(std::sqrt(dot(Span(out, n), Span(out, n))), 1e-12);
        for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
    }
}

void step_forward(const VariantConfig& cfg, const double* s, const double* r, const StepView& in, double* s_next,
                  double* r_next, double* o, double* base, double* correction, double* residual, StepScratch& w) {
    const std::size_t dk = cfg.d_k;
    const std::size_t dv = cfg.d_v;
    const EffectiveGates& g = in.g;
    double* b = base ? base : w.sq.data();
    double* c = correction ? correction : w.rq.data();

    if (!is_residual_kind(cfg.kind)) {
        matvec_into(s, dv, dk, in.q, b);
        for (std::size_t i = 0; i < dv; ++i) b[i] = g.alpha * b[i];

        // Correction state R_t = u k^T with u = v (additive) or v - a S k (delta).
        double* u = w.u.data();
        std::copy(in.v, in.v + dv, u);
        if (is_delta_kind(cfg.kind)) {
            matvec_into(s, dv, dk, in.k, w.p.data());
            for (std::size_t i = 0; i < dv; ++i) u[i] -= g.alpha * w.p[i];
        }
        const double h = g.beta * dot(Span(in.k, dk), Span(in.q, dk));
        for (std::size_t i = 0; i < dv; ++i) c[i] = h * u[i];
        for (std::size_t i = 0; i < dv; ++i) o[i] = b[i] + c[i];

        decay_and_write(s_next, s, dv, dk, g.alpha, g.beta, u, in.k);
        std::copy(r, r + dv * dk, r_next);
        return;
    }

    // Order: residual, auxiliary update, output, base update.
    double* p = w.p.data();
    double* res = residual ? residual : w.r.data();
    matvec_into(s, dv, dk, in.k, p);
    for (std::size_t i = 0; i < dv; ++i) res[i] = squash(cfg, in.v[i] - p[i]);

    switch (cfg.kind) {
        case VariantKind::kRLA:
            decay_and_write(r_next, r, dv, dk, g.alpha, g.gamma, res, in.k);
            break;
        case VariantKind::kRDN: {
            double* z = w.z.data();
            matvec_into(r, dv, dk, in.k, w.w.data());
            for (std::size_t i = 0; i < dv; ++i) z[i] = res[i] - g.alpha * w.w[i];
            decay_and_write(r_next, r, dv, dk, g.alpha, g.gamma, z, in.k);
            break;
        }
        case VariantKind::kRLANoFit: {
            const double* u = cfg.nofit_correction == StatelessCorrection::kResidual ? res : in.v;
            for (std::size_t i = 0; i < dv; ++i) {
                for (std::size_t j = 0; j < dk; ++j) r_next[i * dk + j] = u[i] * in.k[j];
            }
            break;
        }
        default:
            throw std::invalid_argument("step_forward: not a residual kind");
    }

    const double base_scale = cfg.gated_output ? g.alpha : 1.0;
    const double corr_scale = cfg.gated_output ? g.gamma : 1.0;
    matvec_into(s, dv, dk, in.q, b);
    for (std::size_t i = 0; i < dv; ++i) b[i] = base_scale * b[i];
    matvec_into(r_next, dv, dk, in.q, c);
    for (std::size_t i = 0; i < dv; ++i) c[i] = corr_scale * c[i];
    for (std::size_t i = 0; i < dv; ++i) o[i] = b[i] + c[i];

    if (cfg.kind == VariantKind::kRDN) {
        double* u = w.u.data();
        for (std::size_t i = 0; i < dv; ++i) u[i] = in.v[i] - g.alpha * p[i];
        decay_and_write(s_next, s, dv, dk, g.alpha, g.beta, u, in.k);
    } else {
        decay_and_write(s_next, s, dv, dk, g.alpha, g.beta, in.v, in.k);
    }
}

GateGrads step_backward(const VariantConfig& cfg, const double* s, const double* r, const StepView& in,
                        const double* r_next, const double* grad_o, const double* ds_next, const double* dr_next,
                        double* ds, double* dr, double* dq, double* dk_, double* dv_, StepScratch& w) {
    const std::size_t dk = cfg.d_k;
    const std::size_t dv = cfg.d_v;
    const std::size_t n = dv * dk;
    const EffectiveGates& g = in.g;
    const double* q = in.q;
    const double* k = in.k;
    const double* v = in.v;

    zero(dq, dk);
    zero(dk_, dk);
    zero(dv_, dv);
    zero(ds, n);
    GateGrads d;

    double* sq = w.sq.data();
    double* p = w.p.data();
    double* dp = w.dp.data();
    double* u = w.u.data();
    double* du = w.du.data();
    double* dsn_k = w.dsn_k.data();
    matvec_into(s, dv, dk, q, sq);
    matvec_into(s, dv, dk, k, p);
    zero(dp, dv);
    zero(du, dv);

    if (is_residual_kind(cfg.kind)) {
        zero(dr, n);
        double* rr = w.r.data();
        double* dphi = w.dphi.data();
        for (std::size_t i = 0; i < dv; ++i) {
            const double e = v[i] - p[i];
            if (cfg.squash == ResidualSquash::kTanh) {
                rr[i] = std::tanh(e);
                dphi[i] = 1.0 - rr[i] * rr[i];
            } else if (cfg.clip_c) {
                rr[i] = clip(e, *cfg.clip_c);
                dphi[i] = std::abs(e) <= *cfg.clip_c ? 1.0 : 0.0;
            } else {
                rr[i] = e;
                dphi[i] = 1.0;
            }
        }

        const double base_scale = cfg.gated_output ? g.alpha : 1.0;
        const double corr_scale = cfg.gated_output ? g.gamma : 1.0;

        // base = base_scale * S q
        add_outer(ds, dv, dk, base_scale, grad_o, q);
        add_matvec_t(dq, base_scale, s, dv, dk, grad_o);
        // corr = corr_scale * R_t q
        double* drn = w.drn.data();
        std::copy(dr_next, dr_next + n, drn);
        add_outer(drn, dv, dk, corr_scale, grad_o, q);
        add_matvec_t(dq, corr_scale, r_next, dv, dk, grad_o);
        if (cfg.gated_output) {
            d.alpha += dot(Span(grad_o, dv), Span(sq, dv));
            matvec_into(r_next, dv, dk, q, w.rq.data());
            d.gamma += dot(Span(grad_o, dv), Span(w.rq.data(), dv));
        }

        double* drv = w.dr.data();
        double* drn_k = w.drn_k.data();
        zero(drv, dv);
        matvec_into(drn, dv, dk, k, drn_k);
        switch (cfg.kind) {
            case VariantKind::kRLA:
                add_scaled(dr, g.alpha, drn, n);
                d.alpha += dot(Span(drn, n), Span(r, n));
                d.gamma += dot(Span(rr, dv), Span(drn_k, dv));
                add_scaled(drv, g.gamma, drn_k, dv);
                add_matvec_t(dk_, g.gamma, drn, dv, dk, rr);
                break;
            case VariantKind::kRDN: {
                double* wv = w.w.data();
                double* z = w.z.data();
                double* dz = w.dz.data();
                matvec_into(r, dv, dk, k, wv);
                std::copy(rr, rr + dv, z);
                add_scaled(z, -g.alpha, wv, dv);
                add_scaled(dr, g.alpha, drn, n);
                d.alpha += dot(Span(drn, n), Span(r, n));
                zero(dz, dv);
                add_scaled(dz, g.gamma, drn_k, dv);
                d.gamma += dot(Span(z, dv), Span(drn_k, dv));
                add_matvec_t(dk_, g.gamma, drn, dv, dk, z);
                for (std::size_t i = 0; i < dv; ++i) drv[i] += dz[i];
                d.alpha -= dot(Span(wv, dv), Span(dz, dv));
                // w = R k with dw = -a dz
                add_outer(dr, dv, dk, -g.alpha, dz, k);
                add_matvec_t(dk_, -g.alpha, r, dv, dk, dz);
                break;
            }
            case VariantKind::kRLANoFit: {
                const bool from_residual = cfg.nofit_correction == StatelessCorrection::kResidual;
                add_matvec_t(dk_, 1.0, drn, dv, dk, from_residual ? rr : v);
                double* target = from_residual ? drv : dv_;
                for (std::size_t i = 0; i < dv; ++i) target[i] += drn_k[i];
                break;
            }
            default:
                throw std::invalid_argument("step_backward: not a residual kind");
        }

        // S_t = a S + b u k^T
        add_scaled(ds, g.alpha, ds_next, n);
        d.alpha += dot(Span(ds_next, n), Span(s, n));
        matvec_into(ds_next, dv, dk, k, dsn_k);
        std::copy(v, v + dv, u);
        if (cfg.kind == VariantKind::kRDN) add_scaled(u, -g.alpha, p, dv);
        d.beta += dot(Span(u, dv), Span(dsn_k, dv));
        add_matvec_t(dk_, g.beta, ds_next, dv, dk, u);
        add_scaled(du, g.beta, dsn_k, dv);
        for (std::size_t i = 0; i < dv; ++i) dv_[i] += du[i];
        if (cfg.kind == VariantKind::kRDN) {
            d.alpha -= dot(Span(p, dv), Span(du, dv));
            add_scaled(dp, -g.alpha, du, dv);
        }

        // r = phi(v - p)
        for (std::size_t i = 0; i < dv; ++i) {
            const double de = dphi[i] * drv[i];
            dv_[i] += de;
            dp[i] -= de;
        }
    } else {
        const bool delta = is_delta_kind(cfg.kind);
        std::copy(v, v + dv, u);
        if (delta) add_scaled(u, -g.alpha, p, dv);
        const double h = dot(Span(k, dk), Span(q, dk));

        // base = a S q
        add_outer(ds, dv, dk, g.alpha, grad_o, q);
        add_matvec_t(dq, g.alpha, s, dv, dk, grad_o);
        d.alpha += dot(Span(grad_o, dv), Span(sq, dv));
        // correction = b h u
        const double gu = dot(Span(grad_o, dv), Span(u, dv));
        add_scaled(du, g.beta * h, grad_o, dv);
        d.beta += h * gu;
        add_scaled(dk_, g.beta * gu, q, dk);
        add_scaled(dq, g.beta * gu, k, dk);

        // S_t = a S + b u k^T
        add_scaled(ds, g.alpha, ds_next, n);
        d.alpha += dot(Span(ds_next, n), Span(s, n));
        matvec_into(ds_next, dv, dk, k, dsn_k);
        d.beta += dot(Span(u, dv), Span(dsn_k, dv));
        add_scaled(du, g.beta, dsn_k, dv);
        add_matvec_t(dk_, g.beta, ds_next, dv, dk, u);

        for (std::size_t i = 0; i < dv; ++i) dv_[i] += du[i];
        if (delta) {
            d.alpha -= dot(Span(p, dv), Span(du, dv));
            add_scaled(dp, -g.alpha, du, dv);
        }
        // R is carried through untouched.
        std::copy(dr_next, dr_next + n, dr);
    }

    // p = S k
    add_outer(ds, dv, dk, 1.0, dp, k);
    add_matvec_t(dk_, 1.0, s, dv, dk, dp);
    return d;
}

GateGrads input_gate_grads(const VariantConfig& cfg, const GateGrads& e) {
    GateGrads out;
    switch (cfg.kind) {
        case VariantKind::kLinearAttn:
            break;
        case VariantKind::kMamba2:
            out.alpha = e.alpha;
            break;
        case VariantKind::kDeltaNet:
            out.beta = e.beta;
            break;
        case VariantKind::kSGLA:
        case VariantKind::kGatedDeltaNet:
            out.alpha = e.alpha;
            out.beta = e.beta;
            break;
        case VariantKind::kRLA:
        case VariantKind::kRDN:
        case VariantKind::kRLANoFit:
            out.alpha = e.alpha;
            if (cfg.tie_gamma_to_beta) {
                out.beta = e.beta + e.gamma;
            } else {
                out.beta = e.beta;
                out.gamma = e.gamma;
            }
            break;
    }
    return out;
}

}  // namespace resattn::kernels
