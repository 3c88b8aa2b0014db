#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "resattn/reference_model.hpp"

namespace resattn {

namespace {

using X = Extended;
using Vec = std::vector<X>;
using Mat = std::vector<Vec>;  // row-major, rows of equal length

X sigm(X x) { return 1.0L / (1.0L + std::exp(-x)); }
X softplus_x(X x) { return x > 40.0L ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0L)); }

// y = W x for a double matrix W.
Vec project(const Matrix& w, const Vec& x) {
    Vec y(w.rows(), 0.0L);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        X acc = 0.0L;
        for (std::size_t j = 0; j < w.cols(); ++j) acc += static_cast<X>(w(i, j)) * x[j];
        y[i] = acc;
    }
    return y;
}

Vec mv(const Mat& m, const Vec& x) {
    Vec y(m.size(), 0.0L);
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) y[i] += m[i][j] * x[j];
    }
    return y;
}

X inner(const Vec& a, const Vec& b) {
    X s = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Vec rms(const Vec& x, const Vector& scale) {
    const X ms = inner(x, x) / static_cast<X>(x.size());
    const X r = 1.0L / std::sqrt(ms + 1e-6L);
    Vec y(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) y[j] = x[j] * r * static_cast<X>(scale[j]);
    return y;
}

Vec prep(const VariantConfig& cfg, Vec x) {
    if (cfg.use_silu) {
        for (X& v : x) v = v * sigm(v);
    }
    if (cfg.use_l2_norm) {
        const X n = std::max(std::sqrt(inner(x, x)), 1e-12L);
        for (X& v : x) v /= n;
    }
    return x;
}

struct HeadState {
    Mat s;
    Mat r;
};

// One recurrence step written out per kind.
Vec head_step(const VariantConfig& cfg, HeadState& st, const Vec& q, const Vec& k, const Vec& v, X a, X b, X g,
              std::vector<std::uint8_t>& pattern) {
    const std::size_t n = v.size();
    const std::size_t m = k.size();
    switch (cfg.kind) {
        case VariantKind::kLinearAttn: a = 1.0L; b = 1.0L; break;
        case VariantKind::kMamba2: b = 1.0L; break;
        case VariantKind::kDeltaNet: a = 1.0L; break;
        default: break;
    }
    if (is_residual_kind(cfg.kind) && cfg.tie_gamma_to_beta) g = b;

    const Vec sk = mv(st.s, k);
    Vec out(n, 0.0L);
    if (!is_residual_kind(cfg.kind)) {
        // Update first, then read S_t q.
        for (std::size_t i = 0; i < n; ++i) {
            const X u = is_delta_kind(cfg.kind) ? v[i] - a * sk[i] : v[i];
            for (std::size_t j = 0; j < m; ++j) st.s[i][j] = a * st.s[i][j] + b * u * k[j];
        }
        return mv(st.s, q);
    }

    Vec r(n);
    for (std::size_t i = 0; i < n; ++i) {
        const X e = v[i] - sk[i];
        if (cfg.squash == ResidualSquash::kTanh) {
            r[i] = std::tanh(e);
        } else if (cfg.clip_c) {
            const X c = static_cast<X>(*cfg.clip_c);
            pattern.push_back(std::abs(e) <= c);
            r[i] = std::min(std::max(e, -c), c);
        } else {
            r[i] = e;
        }
    }
    const Vec rk = mv(st.r, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            X& x = st.r[i][j];
            switch (cfg.kind) {
                case VariantKind::kRLA: x = a * x + g * r[i] * k[j]; break;
                case VariantKind::kRDN: x = a * x + g * (r[i] - a * rk[i]) * k[j]; break;
                default:
                    x = (cfg.nofit_correction == StatelessCorrection::kResidual ? r[i] : v[i]) * k[j];
                    break;
            }
        }
    }
    const X base_gate = cfg.gated_output ? a : 1.0L;
    const X corr_gate = cfg.gated_output ? g : 1.0L;
    const Vec sq = mv(st.s, q);
    const Vec rq = mv(st.r, q);
    for (std::size_t i = 0; i < n; ++i) out[i] = base_gate * sq[i] + corr_gate * rq[i];
    for (std::size_t i = 0; i < n; ++i) {
        const X u = cfg.kind == VariantKind::kRDN ? v[i] - a * sk[i] : v[i];
        for (std::size_t j = 0; j < m; ++j) st.s[i][j] = a * st.s[i][j] + b * u * k[j];
    }
    return out;
}

}  // namespace

ReferenceForward reference_forward(const Model& model, std::span<const int> tokens) {
    const ModelConfig& cfg = model.config;
    const VariantConfig vcfg = cfg.head_variant();
    const std::size_t T = tokens.size();
    const std::size_t hd = cfg.head_dim;
    ReferenceForward out;

    Mat x(T, Vec(cfg.d_model));
    for (std::size_t t = 0; t < T; ++t) {
        if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= cfg.vocab_size) {
            throw std::out_of_range("reference_forward: token id outside vocabulary");
        }
        for (std::size_t j = 0; j < cfg.d_model; ++j) x[t][j] = model.params.embedding(static_cast<std::size_t>(tokens[t]), j);
    }

    for (const BlockParams& p : model.params.blocks) {
        Mat xn(T), q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            xn[t] = rms(x[t], p.attn_norm);
            q[t] = project(p.w_q, xn[t]);
            k[t] = project(p.w_k, xn[t]);
            v[t] = project(p.w_v, xn[t]);
        }
        Mat heads_out(T, Vec(cfg.n_heads * hd));
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const GateParams& gp = p.gates[h];
            HeadState st{zeros(hd, hd), zeros(hd, hd)};
            for (std::size_t t = 0; t < T; ++t) {
                const X za = project(gp.w_alpha, xn[t])[0] + static_cast<X>(gp.b_alpha);
                const X a = std::exp(-softplus_x(gp.a_raw) * softplus_x(za));
                const X b = sigm(project(gp.w_beta, xn[t])[0]);
                const X g = cfg.disable_correction ? 0.0L : sigm(project(gp.w_gamma, xn[t])[0]);
                auto slice = [&](const Vec& full) { return Vec(full.begin() + h * hd, full.begin() + (h + 1) * hd); };
                const Vec o = head_step(vcfg, st, prep(vcfg, slice(q[t])), prep(vcfg, slice(k[t])), slice(v[t]), a,
                                        b, g, out.clip_pattern);
                std::copy(o.begin(), o.end(), heads_out[t].begin() + h * hd);
            }
        }
        for (std::size_t t = 0; t < T; ++t) {
            const Vec attn = project(p.w_o, heads_out[t]);
            Vec hres(cfg.d_model);
            for (std::size_t j = 0; j < cfg.d_model; ++j) hres[j] = x[t][j] + attn[j];
            Vec up = project(p.mlp_up, rms(hres, p.mlp_norm));
            for (X& u : up) u = u * sigm(u);
            const Vec down = project(p.mlp_down, up);
            for (std::size_t j = 0; j < cfg.d_model; ++j) x[t][j] = hres[j] + down[j];
        }
    }

    // The double forward appends per layer, per head, per position; the
    // loop above produces the same order.
    out.logits.resize(T);
    for (std::size_t t = 0; t < T; ++t) out.logits[t] = project(model.params.unembed, rms(x[t], model.params.final_norm));
    return out;
}

Extended reference_loss(const Model& m, std::span<const std::vector<int>> tokens,
                        std::span<const std::vector<int>> targets, std::vector<std::uint8_t>* clip_pattern) {
    if (tokens.size() != targets.size()) throw std::invalid_argument("reference_loss: batch shape mismatch");
    X total = 0.0L;
    std::size_t supervised = 0;
    for (std::size_t b = 0; b < tokens.size(); ++b) {
        const ReferenceForward f = reference_forward(m, tokens[b]);
        if (clip_pattern) clip_pattern->insert(clip_pattern->end(), f.clip_pattern.begin(), f.clip_pattern.end());
        for (std::size_t t = 0; t < targets[b].size(); ++t) {
            const int target = targets[b][t];
            if (target == kIgnoreTarget) continue;
            const Vec& z = f.logits[t];
            const X zmax = *std::max_element(z.begin(), z.end());
            X sum = 0.0L;
            for (X zi : z) sum += std::exp(zi - zmax);
            total += zmax + std::log(sum) - z[static_cast<std::size_t>(target)];
            ++supervised;
        }
    }
    return supervised == 0 ? 0.0L : total / static_cast<X>(supervised);
}

}  // namespace resattn
