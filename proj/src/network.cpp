#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "network_internal.hpp"
#include "resattn/network.hpp"
#include "resattn/rng.hpp"
#include "step_kernels.hpp"

namespace resattn {

namespace {

void note_activation(ForwardStats* stats, const Matrix& m) {
    if (stats) stats->max_abs_activation = std::max(stats->max_abs_activation, max_abs(m.values()));
}

Vector ones(std::size_t n) { return Vector(std::vector<double>(n, 1.0)); }

}  // namespace

double decay_multiplier(const GateParams& p) { return softplus(p.a_raw); }

Gates compute_gates(const GateParams& p, const Vector& x) {
    const double z_alpha = dot(p.w_alpha.row(0), x.values()) + p.b_alpha;
    Gates g;
    g.alpha = std::exp(-decay_multiplier(p) * softplus(z_alpha));
    g.beta = sigmoid(dot(p.w_beta.row(0), x.values()));
    g.gamma = sigmoid(dot(p.w_gamma.row(0), x.values()));
    return g;
}

VariantConfig ModelConfig::head_variant() const {
    VariantConfig v = variant;
    v.d_k = head_dim;
    v.d_v = head_dim;
    return v;
}

void ModelConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || head_dim == 0 || d_ff == 0 || vocab_size == 0) {
        throw std::invalid_argument("ModelConfig: all sizes must be positive");
    }
    if (!(init_std > 0.0)) throw std::invalid_argument("ModelConfig: init_std must be positive");
    if (!(alpha_init_min > 0.0 && alpha_init_min <= alpha_init_max && alpha_init_max < 1.0)) {
        throw std::invalid_argument("ModelConfig: initial decay range must satisfy 0 < min <= max < 1");
    }
    head_variant().validate();
}

std::vector<ParamRef> param_refs(ModelParams& params) {
    std::vector<ParamRef> refs;
    auto add_matrix = [&](std::string name, Matrix& m, bool decay) {
        refs.push_back({std::move(name), m.values(), {m.rows(), m.cols()}, decay});
    };
    auto add_vector = [&](std::string name, Vector& v) {
        refs.push_back({std::move(name), v.values(), {v.dim()}, false});
    };
    auto add_scalar = [&](std::string name, double& x) {
        refs.push_back({std::move(name), std::span<double>(&x, 1), {1}, false});
    };

    add_matrix("embedding", params.embedding, true);
    add_matrix("unembed", params.unembed, true);
    add_vector("final_norm", params.final_norm);
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        BlockParams& b = params.blocks[l];
        const std::string prefix = "blocks." + std::to_string(l) + ".";
        add_vector(prefix + "attn_norm", b.attn_norm);
        add_matrix(prefix + "w_q", b.w_q, true);
        add_matrix(prefix + "w_k", b.w_k, true);
        add_matrix(prefix + "w_v", b.w_v, true);
        add_matrix(prefix + "w_o", b.w_o, true);
        for (std::size_t h = 0; h < b.gates.size(); ++h) {
            GateParams& g = b.gates[h];
            const std::string gp = prefix + "gates." + std::to_string(h) + ".";
            add_matrix(gp + "w_alpha", g.w_alpha, false);
            add_scalar(gp + "b_alpha", g.b_alpha);
            add_scalar(gp + "a_raw", g.a_raw);
            add_matrix(gp + "w_beta", g.w_beta, false);
            add_matrix(gp + "w_gamma", g.w_gamma, false);
        }
        add_vector(prefix + "mlp_norm", b.mlp_norm);
        add_matrix(prefix + "mlp_up", b.mlp_up, true);
        add_matrix(prefix + "mlp_down", b.mlp_down, true);
    }
    std::sort(refs.begin(), refs.end(), [](const ParamRef& a, const ParamRef& b) { return a.name < b.name; });
    return refs;
}

std::size_t param_count(const ModelParams& params) {
    std::size_t n = 0;
    for (const auto& r : param_refs(const_cast<ModelParams&>(params))) n += r.values.size();
    return n;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for (auto& r : param_refs(z)) std::fill(r.values.begin(), r.values.end(), 0.0);
    return z;
}

Model init_model(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t width = cfg.n_heads * cfg.head_dim;
    const double std = cfg.init_std;

    Model m{cfg, {}};
    ModelParams& p = m.params;
    p.embedding = rng.normal_matrix(cfg.vocab_size, cfg.d_model, std);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        BlockParams b;
        b.attn_norm = ones(cfg.d_model);
        b.w_q = rng.normal_matrix(width, cfg.d_model, std);
        b.w_k = rng.normal_matrix(width, cfg.d_model, std);
        b.w_v = rng.normal_matrix(width, cfg.d_model, std);
        b.w_o = rng.normal_matrix(cfg.d_model, width, std);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            GateParams g;
            g.w_alpha = rng.normal_matrix(1, cfg.d_model, std);
            g.w_beta = rng.normal_matrix(1, cfg.d_model, std);
            g.w_gamma = rng.normal_matrix(1, cfg.d_model, std);
            // Decay multipliers log-spaced over [1, 16] across heads, initial
            // decay drawn from [alpha_init_min, alpha_init_max].
            const double frac = cfg.n_heads > 1 ? static_cast<double>(h) / static_cast<double>(cfg.n_heads - 1) : 0.0;
            const double multiplier = std::exp(frac * std::log(16.0));
            g.a_raw = softplus_inverse(multiplier);
            const double alpha0 = rng.uniform(cfg.alpha_init_min, cfg.alpha_init_max);
            g.b_alpha = softplus_inverse(-std::log(alpha0) / multiplier);
            b.gates.push_back(std::move(g));
        }
        b.mlp_norm = ones(cfg.d_model);
        b.mlp_up = rng.normal_matrix(cfg.d_ff, cfg.d_model, std);
        b.mlp_down = rng.normal_matrix(cfg.d_model, cfg.d_ff, std);
        p.blocks.push_back(std::move(b));
    }
    p.final_norm = ones(cfg.d_model);
    p.unembed = rng.normal_matrix(cfg.vocab_size, cfg.d_model, std);
    return m;
}

namespace detail {

Matrix rms_forward(const Matrix& x, const Vector& scale, RmsTrace* trace) {
    if (scale.dim() != x.cols()) throw std::invalid_argument("rms norm: scale dim mismatch");
    Matrix normalized(x.rows(), x.cols());
    Matrix y(x.rows(), x.cols());
    std::vector<double> rinv(x.rows());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto row = x.row(t);
        const double ms = dot(row, row) / static_cast<double>(x.cols());
        rinv[t] = 1.0 / std::sqrt(ms + kRmsEps);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            normalized(t, j) = row[j] * rinv[t];
            y(t, j) = normalized(t, j) * scale[j];
        }
    }
    if (trace) {
        trace->normalized = std::move(normalized);
        trace->rinv = std::move(rinv);
    }
    return y;
}

Matrix block_forward(const BlockParams& p, const Matrix& xs, const ModelConfig& cfg, LayerTrace* trace,
                     ForwardStats* stats) {
    if (xs.cols() != cfg.d_model) {
        throw std::invalid_argument("forward_block: input width " + std::to_string(xs.cols()) + " vs d_model " +
                                    std::to_string(cfg.d_model));
    }
    const std::size_t T = xs.rows();
    const std::size_t H = cfg.n_heads;
    const std::size_t hd = cfg.head_dim;
    const VariantConfig vcfg = cfg.head_variant();

    RmsTrace attn_rms;
    const Matrix xn = rms_forward(xs, p.attn_norm, trace ? &attn_rms : nullptr);
    const Matrix q_raw = matmul_nt(xn, p.w_q);
    const Matrix k_raw = matmul_nt(xn, p.w_k);
    const Matrix v_all = matmul_nt(xn, p.w_v);

    Matrix z_alpha(T, H), z_beta(T, H), z_gamma(T, H);
    Matrix attn_out(T, H * hd);
    std::vector<HeadTrace> scratch_heads;
    std::vector<HeadTrace>& heads = trace ? trace->heads : scratch_heads;
    heads.resize(trace ? H : 0);
    kernels::StepScratch scratch(vcfg);
    const std::size_t block = hd * hd;
    const bool keep = trace != nullptr;

    for (std::size_t h = 0; h < H; ++h) {
        const GateParams& gp = p.gates[h];
        const double multiplier = decay_multiplier(gp);
        HeadTrace local;
        HeadTrace& ht = keep ? heads[h] : local;
        // Without a trace only the current and next state are kept.
        const std::size_t n_states = keep ? T + 1 : 2;
        ht.q.resize(T * hd);
        ht.k.resize(T * hd);
        ht.v.resize(T * hd);
        ht.alpha.resize(T);
        ht.beta.resize(T);
        ht.gamma.resize(T);
        ht.s.resize(n_states * block);
        ht.r.resize(n_states * block);
        std::fill_n(ht.s.begin(), block, 0.0);
        std::fill_n(ht.r.begin(), block, 0.0);
        if (keep && vcfg.use_silu) {
            ht.q_sig.resize(T * hd);
            ht.k_sig.resize(T * hd);
        }
        for (std::size_t t = 0; t < T; ++t) {
            const auto x = xn.row(t);
            z_alpha(t, h) = dot(gp.w_alpha.row(0), x) + gp.b_alpha;
            z_beta(t, h) = dot(gp.w_beta.row(0), x);
            z_gamma(t, h) = dot(gp.w_gamma.row(0), x);

            double* q = ht.q.data() + t * hd;
            double* k = ht.k.data() + t * hd;
            double* v = ht.v.data() + t * hd;
            const bool sig = keep && vcfg.use_silu;
            kernels::preprocess(vcfg, q_raw.row(t).data() + h * hd, hd, q, sig ? ht.q_sig.data() + t * hd : nullptr);
            kernels::preprocess(vcfg, k_raw.row(t).data() + h * hd, hd, k, sig ? ht.k_sig.data() + t * hd : nullptr);
            std::copy_n(v_all.row(t).data() + h * hd, hd, v);
            ht.alpha[t] = std::exp(-multiplier * softplus(z_alpha(t, h)));
            ht.beta[t] = sigmoid(z_beta(t, h));
            ht.gamma[t] = cfg.disable_correction ? 0.0 : sigmoid(z_gamma(t, h));

            const std::size_t cur = keep ? t : t % 2;
            const std::size_t nxt = keep ? t + 1 : (t + 1) % 2;
            const double* s = ht.s.data() + cur * block;
            const double* r = ht.r.data() + cur * block;

            if (stats && is_residual_kind(vcfg.kind)) {
                for (std::size_t i = 0; i < hd; ++i) {
                    const double e = v[i] - dot(std::span<const double>(s + i * hd, hd), std::span<const double>(k, hd));
                    stats->max_abs_residual = std::max(stats->max_abs_residual, std::abs(e));
                    if (vcfg.clip_c && vcfg.squash == ResidualSquash::kClip) {
                        stats->clip_pattern.push_back(std::abs(e) <= *vcfg.clip_c);
                    }
                }
            }

            const kernels::StepView view{q, k, v, kernels::effective_gates(vcfg, ht.alpha[t], ht.beta[t], ht.gamma[t])};
            kernels::step_forward(vcfg, s, r, view, ht.s.data() + nxt * block, ht.r.data() + nxt * block,
                                  attn_out.row(t).data() + h * hd, nullptr, nullptr, nullptr, scratch);
        }
    }

    Matrix hres = matmul_nt(attn_out, p.w_o);
    hres += xs;
    RmsTrace mlp_rms;
    const Matrix hn = rms_forward(hres, p.mlp_norm, trace ? &mlp_rms : nullptr);
    const Matrix up = matmul_nt(hn, p.mlp_up);
    Matrix up_sig(up.rows(), up.cols());
    Matrix act(up.rows(), up.cols());
    for (std::size_t i = 0; i < up.size(); ++i) {
        const double x = up.values()[i];
        if (!std::isfinite(x)) throw std::domain_error("non-finite input to elementwise nonlinearity");
        up_sig.values()[i] = sigmoid(x);
        act.values()[i] = x * up_sig.values()[i];
    }
    Matrix out = matmul_nt(act, p.mlp_down);
    out += hres;

    note_activation(stats, attn_out);
    note_activation(stats, out);

    if (trace) {
        trace->x_in = xs;
        trace->attn_rms = std::move(attn_rms);
        trace->xn = xn;
        trace->q_raw = q_raw;
        trace->k_raw = k_raw;
        trace->v = v_all;
        trace->z_alpha = std::move(z_alpha);
        trace->z_beta = std::move(z_beta);
        trace->z_gamma = std::move(z_gamma);
        trace->attn_out = std::move(attn_out);
        trace->h = std::move(hres);
        trace->mlp_rms = std::move(mlp_rms);
        trace->hn = hn;
        trace->up = up;
        trace->up_sig = std::move(up_sig);
        trace->act = act;
    }
    return out;
}

Matrix model_forward(const Model& m, std::span<const int> tokens, ModelTrace* trace, ForwardStats* stats) {
    const ModelConfig& cfg = m.config;
    Matrix x(tokens.size(), cfg.d_model);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const int id = tokens[t];
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
            throw std::out_of_range("token id " + std::to_string(id) + " at position " + std::to_string(t) +
                                    " outside vocabulary of " + std::to_string(cfg.vocab_size));
        }
        const auto e = m.params.embedding.row(static_cast<std::size_t>(id));
        std::copy(e.begin(), e.end(), x.row(t).begin());
    }
    if (trace) {
        trace->tokens.assign(tokens.begin(), tokens.end());
        trace->layers.resize(cfg.n_layers);
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        x = block_forward(m.params.blocks[l], x, cfg, trace ? &trace->layers[l] : nullptr, stats);
    }
    RmsTrace final_rms;
    Matrix y = rms_forward(x, m.params.final_norm, trace ? &final_rms : nullptr);
    Matrix logits = matmul_nt(y, m.params.unembed);
    note_activation(stats, logits);
    if (trace) {
        trace->x_final = std::move(x);
        trace->final_rms = std::move(final_rms);
        trace->y = std::move(y);
        trace->logits = logits;
    }
    return logits;
}

}  // namespace detail

Matrix forward_block(const BlockParams& p, const Matrix& xs, const ModelConfig& cfg) {
    return detail::block_forward(p, xs, cfg, nullptr, nullptr);
}

Matrix forward_model(const Model& m, std::span<const int> tokens, ForwardStats* stats) {
    return detail::model_forward(m, tokens, nullptr, stats);
}

}  // namespace resattn
