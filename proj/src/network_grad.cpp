#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "network_internal.hpp"
#include "resattn/network.hpp"
#include "step_kernels.hpp"

namespace resattn {

namespace {

using detail::LayerTrace;
using detail::ModelTrace;
using detail::RmsTrace;

// Returns dx for y = scale * x * rinv, accumulating the scale gradient.
Matrix rms_backward(const Matrix& dy, const Vector& scale, const RmsTrace& trace, Vector& dscale) {
    const std::size_t n = dy.cols();
    Matrix dx(dy.rows(), n);
    std::vector<double> dxhat(n);
    for (std::size_t t = 0; t < dy.rows(); ++t) {
        const auto xhat = trace.normalized.row(t);
        const auto g = dy.row(t);
        double proj = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dscale[j] += g[j] * xhat[j];
            dxhat[j] = g[j] * scale[j];
            proj += dxhat[j] * xhat[j];
        }
        proj /= static_cast<double>(n);
        const double rinv = trace.rinv[t];
        auto out = dx.row(t);
        for (std::size_t j = 0; j < n; ++j) out[j] = rinv * (dxhat[j] - xhat[j] * proj);
    }
    return dx;
}

// d/dx x sigmoid(x), given s = sigmoid(x).
double silu_derivative(double x, double s) { return s * (1.0 + x * (1.0 - s)); }

// Gradient through q -> silu -> l2 normalize, matching preprocess_qk.
// sig holds sigmoid(raw) when silu is on; act and g are scratch of the same
// length as raw.
void preprocess_backward(const VariantConfig& cfg, std::span<const double> raw, const double* sig,
                         const double* grad_out, std::span<double> grad_raw, std::vector<double>& act,
                         std::vector<double>& g) {
    const std::size_t n = raw.size();
    for (std::size_t i = 0; i < n; ++i) act[i] = cfg.use_silu ? raw[i] * sig[i] : raw[i];

    std::copy_n(grad_out, n, g.begin());
    if (cfg.use_l2_norm) {
        const double norm = std::sqrt(dot(act, act));
        constexpr double kEps = 1e-12;
        if (norm > kEps) {
            double proj = 0.0;
            for (std::size_t i = 0; i < n; ++i) proj += (act[i] / norm) * grad_out[i];
            for (std::size_t i = 0; i < n; ++i) g[i] = (grad_out[i] - (act[i] / norm) * proj) / norm;
        } else {
            for (std::size_t i = 0; i < n; ++i) g[i] = grad_out[i] / kEps;
        }
    }
    for (std::size_t i = 0; i < n; ++i) grad_raw[i] += cfg.use_silu ? g[i] * silu_derivative(raw[i], sig[i]) : g[i];
}

// Backward through one block; returns the gradient with respect to its input.
Matrix block_backward(const BlockParams& p, const LayerTrace& tr, const ModelConfig& cfg, const Matrix& dout,
                      BlockParams& grad) {
    const std::size_t T = tr.x_in.rows();
    const std::size_t H = cfg.n_heads;
    const std::size_t hd = cfg.head_dim;
    const VariantConfig vcfg = cfg.head_variant();

    // out = h + silu(hn W_up^T) W_down^T
    grad.mlp_down += matmul_tn(dout, tr.act);
    Matrix dact = matmul(dout, p.mlp_down);
    for (std::size_t i = 0; i < dact.size(); ++i) {
        dact.values()[i] *= silu_derivative(tr.up.values()[i], tr.up_sig.values()[i]);
    }
    grad.mlp_up += matmul_tn(dact, tr.hn);
    const Matrix dhn = matmul(dact, p.mlp_up);
    Matrix dh = rms_backward(dhn, p.mlp_norm, tr.mlp_rms, grad.mlp_norm);
    dh += dout;

    // h = x + attn_out W_o^T
    grad.w_o += matmul_tn(dh, tr.attn_out);
    const Matrix dattn = matmul(dh, p.w_o);

    Matrix dq_raw(T, H * hd), dk_raw(T, H * hd), dv(T, H * hd);
    Matrix dxn(T, cfg.d_model);
    kernels::StepScratch scratch(vcfg);
    const std::size_t block = hd * hd;
    std::vector<double> ds(block), dr(block), ds_next(block), dr_next(block);
    std::vector<double> dq(hd), dk(hd), act(hd), g(hd);
    for (std::size_t h = 0; h < H; ++h) {
        const auto& ht = tr.heads[h];
        const GateParams& gp = p.gates[h];
        GateParams& gg = grad.gates[h];
        const double multiplier = decay_multiplier(gp);
        double d_multiplier = 0.0;

        std::fill(ds_next.begin(), ds_next.end(), 0.0);
        std::fill(dr_next.begin(), dr_next.end(), 0.0);
        for (std::size_t t = T; t-- > 0;) {
            const double alpha = ht.alpha[t];
            const double beta = ht.beta[t];
            const double gamma = ht.gamma[t];
            const kernels::StepView view{ht.q.data() + t * hd, ht.k.data() + t * hd, ht.v.data() + t * hd,
                                         kernels::effective_gates(vcfg, alpha, beta, gamma)};
            const kernels::GateGrads eg = kernels::step_backward(
                vcfg, ht.s.data() + t * block, ht.r.data() + t * block, view, ht.r.data() + (t + 1) * block,
                dattn.row(t).data() + h * hd, ds_next.data(), dr_next.data(), ds.data(), dr.data(), dq.data(),
                dk.data(), dv.row(t).data() + h * hd, scratch);
            std::swap(ds, ds_next);
            std::swap(dr, dr_next);
            const kernels::GateGrads dgate = kernels::input_gate_grads(vcfg, eg);

            const double* q_sig = vcfg.use_silu ? ht.q_sig.data() + t * hd : nullptr;
            const double* k_sig = vcfg.use_silu ? ht.k_sig.data() + t * hd : nullptr;
            preprocess_backward(vcfg, tr.q_raw.row(t).subspan(h * hd, hd), q_sig, dq.data(),
                                dq_raw.row(t).subspan(h * hd, hd), act, g);
            preprocess_backward(vcfg, tr.k_raw.row(t).subspan(h * hd, hd), k_sig, dk.data(),
                                dk_raw.row(t).subspan(h * hd, hd), act, g);

            // Gates.
            const double za = tr.z_alpha(t, h);
            const double dza = dgate.alpha * alpha * (-multiplier) * sigmoid(za);
            d_multiplier += dgate.alpha * alpha * (-softplus(za));
            const double dzb = dgate.beta * beta * (1.0 - beta);
            const double dzg = cfg.disable_correction ? 0.0 : dgate.gamma * gamma * (1.0 - gamma);

            gg.b_alpha += dza;
            const auto x = tr.xn.row(t);
            auto dx = dxn.row(t);
            auto wa = gg.w_alpha.row(0);
            auto wb = gg.w_beta.row(0);
            auto wg = gg.w_gamma.row(0);
            const auto pa = gp.w_alpha.row(0);
            const auto pb = gp.w_beta.row(0);
            const auto pg = gp.w_gamma.row(0);
            for (std::size_t j = 0; j < cfg.d_model; ++j) {
                wa[j] += dza * x[j];
                wb[j] += dzb * x[j];
                wg[j] += dzg * x[j];
                dx[j] += dza * pa[j] + dzb * pb[j] + dzg * pg[j];
            }
        }
        gg.a_raw += d_multiplier * sigmoid(gp.a_raw);
    }

    grad.w_q += matmul_tn(dq_raw, tr.xn);
    grad.w_k += matmul_tn(dk_raw, tr.xn);
    grad.w_v += matmul_tn(dv, tr.xn);
    dxn += matmul(dq_raw, p.w_q);
    dxn += matmul(dk_raw, p.w_k);
    dxn += matmul(dv, p.w_v);

    Matrix dx = rms_backward(dxn, p.attn_norm, tr.attn_rms, grad.attn_norm);
    dx += dh;
    return dx;
}

struct RowLoss {
    double loss = 0.0;
    std::size_t supervised = 0;
};

// Summed cross entropy of one sequence; fills dlogits with scale * (softmax - onehot).
RowLoss cross_entropy(const Matrix& logits, std::span<const int> targets, double scale, Matrix* dlogits) {
    if (targets.size() != logits.rows()) {
        throw std::invalid_argument("targets length " + std::to_string(targets.size()) + " vs " +
                                    std::to_string(logits.rows()) + " positions");
    }
    RowLoss out;
    const std::size_t V = logits.cols();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        const int target = targets[t];
        if (target == kIgnoreTarget) continue;
        if (target < 0 || static_cast<std::size_t>(target) >= V) {
            throw std::out_of_range("target id " + std::to_string(target) + " outside vocabulary");
        }
        const auto z = logits.row(t);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double x : z) sum += std::exp(x - zmax);
        const double lse = zmax + std::log(sum);
        out.loss += lse - z[static_cast<std::size_t>(target)];
        ++out.supervised;
        if (dlogits) {
            auto d = dlogits->row(t);
            for (std::size_t j = 0; j < V; ++j) d[j] = scale * std::exp(z[j] - lse);
            d[static_cast<std::size_t>(target)] -= scale;
        }
    }
    return out;
}

std::size_t count_supervised(std::span<const std::vector<int>> targets) {
    std::size_t n = 0;
    for (const auto& row : targets) n += static_cast<std::size_t>(std::count_if(row.begin(), row.end(), [](int t) { return t != kIgnoreTarget; }));
    return n;
}

void check_batch(std::span<const std::vector<int>> tokens, std::span<const std::vector<int>> targets) {
    if (tokens.size() != targets.size()) {
        throw std::invalid_argument("batch has " + std::to_string(tokens.size()) + " token rows but " +
                                    std::to_string(targets.size()) + " target rows");
    }
}

}  // namespace

LossAndGrads backward(const Model& m, std::span<const std::vector<int>> tokens,
                      std::span<const std::vector<int>> targets, double loss_scale) {
    check_batch(tokens, targets);
    const ModelConfig& cfg = m.config;
    LossAndGrads result;
    result.grads = zeros_like(m.params);
    result.supervised = count_supervised(targets);
    if (result.supervised == 0) return result;
    const double scale = loss_scale / static_cast<double>(result.supervised);

    double total = 0.0;
    ModelTrace trace;  // reused so per-head buffers keep their capacity
    for (std::size_t b = 0; b < tokens.size(); ++b) {
        ForwardStats stats;
        detail::model_forward(m, tokens[b], &trace, &stats);
        result.max_abs_activation = std::max(result.max_abs_activation, stats.max_abs_activation);

        Matrix dlogits(trace.logits.rows(), trace.logits.cols());
        total += cross_entropy(trace.logits, targets[b], scale, &dlogits).loss;

        Gradients& g = result.grads;
        g.unembed += matmul_tn(dlogits, trace.y);
        const Matrix dy = matmul(dlogits, m.params.unembed);
        Matrix dx = rms_backward(dy, m.params.final_norm, trace.final_rms, g.final_norm);
        for (std::size_t l = cfg.n_layers; l-- > 0;) {
            dx = block_backward(m.params.blocks[l], trace.layers[l], cfg, dx, g.blocks[l]);
        }
        for (std::size_t t = 0; t < trace.tokens.size(); ++t) {
            auto e = g.embedding.row(static_cast<std::size_t>(trace.tokens[t]));
            const auto d = dx.row(t);
            for (std::size_t j = 0; j < e.size(); ++j) e[j] += d[j];
        }
    }
    result.loss = loss_scale * total / static_cast<double>(result.supervised);
    if (!std::isfinite(result.loss)) throw std::runtime_error("backward: non-finite loss");
    return result;
}

double evaluate_loss(const Model& m, std::span<const std::vector<int>> tokens,
                     std::span<const std::vector<int>> targets, ForwardStats* stats) {
    check_batch(tokens, targets);
    const std::size_t supervised = count_supervised(targets);
    if (supervised == 0) return 0.0;
    double total = 0.0;
    for (std::size_t b = 0; b < tokens.size(); ++b) {
        const Matrix logits = detail::model_forward(m, tokens[b], nullptr, stats);
        total += cross_entropy(logits, targets[b], 1.0, nullptr).loss;
    }
    return total / static_cast<double>(supervised);
}

}  // namespace resattn
