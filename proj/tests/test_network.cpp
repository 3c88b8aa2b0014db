#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <limits>
#include <vector>

#include "resattn/checks.hpp"
#include "resattn/network.hpp"
#include "resattn/reference_model.hpp"

using namespace resattn;

namespace {

ModelConfig small_config(VariantKind kind, std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 12;
    cfg.n_heads = 2;
    cfg.head_dim = 3;
    cfg.d_ff = 20;
    cfg.vocab_size = 9;
    cfg.variant.kind = kind;
    cfg.seed = Seed{seed};
    cfg.init_std = 0.3;
    return cfg;
}

std::vector<int> random_tokens(Rng& rng, std::size_t len, std::size_t vocab) {
    std::vector<int> t(len);
    for (int& x : t) x = static_cast<int>(rng.below(vocab));
    return t;
}

double ref_diff(const Model& m, const std::vector<int>& tokens) {
    const Matrix logits = forward_model(m, tokens);
    const ReferenceForward ref = reference_forward(m, tokens);
    double w = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t)
        for (std::size_t j = 0; j < logits.cols(); ++j)
            w = std::fmax(w, std::abs(logits(t, j) - static_cast<double>(ref.logits[t][j])));
    return w;
}

}  // namespace

TEST_CASE("forward agrees with the extended precision reference for every kind") {
    Rng rng(Seed{51});
    for (VariantKind kind : kAllVariantKinds) {
        CAPTURE(variant_name(kind));
        const Model m = init_model(small_config(kind));
        CHECK(ref_diff(m, random_tokens(rng, 17, 9)) < 1e-11);
    }
    ModelConfig cfg = small_config(VariantKind::kRDN);
    cfg.variant.gated_output = false;
    cfg.variant.tie_gamma_to_beta = true;
    cfg.variant.squash = ResidualSquash::kTanh;
    CHECK(ref_diff(init_model(cfg), random_tokens(rng, 9, 9)) < 1e-11);
}

TEST_CASE("outputs are causal") {
    Rng rng(Seed{52});
    for (VariantKind kind : {VariantKind::kSGLA, VariantKind::kRLA, VariantKind::kRDN}) {
        const Model m = init_model(small_config(kind));
        const std::size_t len = 16;
        const std::vector<int> base = random_tokens(rng, len, 9);
        const Matrix ref = forward_model(m, base);
        // Changing token p must leave every earlier row bit-identical.
        for (std::size_t p = 0; p < len; ++p) {
            std::vector<int> changed = base;
            changed[p] = (changed[p] + 1) % 9;
            const Matrix out = forward_model(m, changed);
            bool prefix_same = true;
            for (std::size_t t = 0; t < p; ++t)
                for (std::size_t j = 0; j < out.cols(); ++j) prefix_same = prefix_same && out(t, j) == ref(t, j);
            CHECK(prefix_same);
            double moved = 0.0;
            for (std::size_t j = 0; j < out.cols(); ++j) moved = std::fmax(moved, std::abs(out(p, j) - ref(p, j)));
            CHECK(moved > 0.0);
        }
    }
}

TEST_CASE("loss scale is linear and fully masked batches give zero") {
    Rng rng(Seed{53});
    const Model m = init_model(small_config(VariantKind::kRLA));
    const std::vector<std::vector<int>> tokens{random_tokens(rng, 8, 9), random_tokens(rng, 8, 9)};
    std::vector<std::vector<int>> targets{random_tokens(rng, 8, 9), random_tokens(rng, 8, 9)};
    targets[0][3] = kIgnoreTarget;
    const LossAndGrads one = backward(m, tokens, targets, 1.0);
    const LossAndGrads three = backward(m, tokens, targets, 3.0);
    CHECK(one.supervised == 15);
    CHECK(three.loss == doctest::Approx(3.0 * one.loss).epsilon(1e-14));
    CHECK(one.loss == doctest::Approx(evaluate_loss(m, tokens, targets)).epsilon(1e-14));
    CHECK(one.loss == doctest::Approx(static_cast<double>(reference_loss(m, tokens, targets))).epsilon(1e-12));
    Gradients g1 = one.grads;
    Gradients g3 = three.grads;
    auto r1 = param_refs(g1);
    auto r3 = param_refs(g3);
    for (std::size_t i = 0; i < r1.size(); ++i)
        for (std::size_t j = 0; j < r1[i].values.size(); ++j)
            CHECK(r3[i].values[j] == doctest::Approx(3.0 * r1[i].values[j]).epsilon(1e-12));

    const std::vector<std::vector<int>> none{std::vector<int>(8, kIgnoreTarget), std::vector<int>(8, kIgnoreTarget)};
    const LossAndGrads masked = backward(m, tokens, none);
    CHECK(masked.loss == 0.0);
    CHECK(masked.supervised == 0);
    Gradients gm = masked.grads;
    for (const auto& ref : param_refs(gm)) CHECK(max_abs(ref.values) == 0.0);
}

TEST_CASE("disabling the correction removes every dependence on the gamma projection") {
    Rng rng(Seed{54});
    ModelConfig cfg = small_config(VariantKind::kRLA);
    cfg.disable_correction = true;
    Model m = init_model(cfg);
    const std::vector<int> tokens = random_tokens(rng, 10, 9);
    CHECK(ref_diff(m, tokens) < 1e-11);
    const Matrix before = forward_model(m, tokens);
    for (auto& block : m.params.blocks)
        for (auto& g : block.gates) g.w_gamma = rng.normal_matrix(1, cfg.d_model, 5.0);
    CHECK(forward_model(m, tokens) == before);
    const LossAndGrads lg = backward(m, {&tokens, 1}, {&tokens, 1});
    for (const auto& block : lg.grads.blocks)
        for (const auto& g : block.gates) CHECK(max_abs(g.w_gamma.values()) == 0.0);
}

TEST_CASE("a strongly negative gamma pre-activation approaches the disabled model") {
    Rng rng(Seed{55});
    ModelConfig cfg = small_config(VariantKind::kRDN);
    Model m = init_model(cfg);
    // The gamma projection has no bias, so saturation is input specific.
    GateParams gp = m.params.blocks[0].gates[0];
    const Vector x = rng.normal_vector(cfg.d_model);
    for (std::size_t j = 0; j < cfg.d_model; ++j) gp.w_gamma(0, j) = -1e3 * x[j];
    CHECK(compute_gates(gp, x).gamma < 1e-300);
    ModelConfig off = cfg;
    off.disable_correction = true;
    CHECK(ref_diff(init_model(off), random_tokens(rng, 8, 9)) < 1e-11);
}

TEST_CASE("gates follow their closed forms") {
    GateParams p;
    p.w_alpha = Matrix(1, 2, {0.5, -1.0});
    p.b_alpha = 0.25;
    p.a_raw = -0.3;
    p.w_beta = Matrix(1, 2, {1.0, 1.0});
    p.w_gamma = Matrix(1, 2, {-2.0, 0.0});
    const Vector x{0.4, 0.1};
    const Gates g = compute_gates(p, x);
    const double sp = [](double z) { return std::log1p(std::exp(z)); }(-0.3);
    CHECK(g.alpha == doctest::Approx(std::exp(-sp * std::log1p(std::exp(0.2 - 0.1 + 0.25)))));
    CHECK(g.beta == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
    CHECK(g.gamma == doctest::Approx(1.0 / (1.0 + std::exp(0.8))));
    CHECK(g.alpha > 0.0);
    CHECK(g.alpha < 1.0);
}

TEST_CASE("long random runs stay finite") {
    Rng rng(Seed{56});
    for (VariantKind kind : {VariantKind::kRLA, VariantKind::kRDN}) {
        ModelConfig cfg = small_config(kind);
        cfg.n_layers = 1;
        cfg.init_std = 1.0;
        const Model m = init_model(cfg);
        ForwardStats stats;
        const Matrix logits = forward_model(m, random_tokens(rng, 1000, 9), &stats);
        bool finite = true;
        for (double v : logits.values()) finite = finite && std::isfinite(v);
        CHECK(finite);
        CHECK(std::isfinite(stats.max_abs_residual));
    }
}

TEST_CASE("parameter bookkeeping") {
    ModelConfig cfg = small_config(VariantKind::kRLA);
    Model m = init_model(cfg);
    const auto refs = param_refs(m.params);
    for (std::size_t i = 1; i < refs.size(); ++i) CHECK(refs[i - 1].name < refs[i].name);
    std::size_t total = 0;
    for (const auto& r : refs) total += r.values.size();
    CHECK(total == param_count(m.params));
    // Two init calls with the same seed agree; a different seed does not.
    Model again = init_model(cfg);
    CHECK(again.params.embedding == m.params.embedding);
    cfg.seed = Seed{2};
    CHECK_FALSE(init_model(cfg).params.embedding == m.params.embedding);
}

TEST_CASE("invalid configs and tokens are rejected") {
    ModelConfig cfg = small_config(VariantKind::kRLA);
    cfg.d_model = 0;
    CHECK_THROWS_AS(init_model(cfg), std::invalid_argument);
    const Model m = init_model(small_config(VariantKind::kRLA));
    CHECK_THROWS(forward_model(m, std::vector<int>{1, 9}));
    CHECK_THROWS(forward_model(m, std::vector<int>{-1}));
}

TEST_CASE("gradcheck passes on the small fixture") {
    GradcheckOptions opts;
    opts.kind = VariantKind::kRDN;
    opts.seq_len = 6;
    opts.d_model = 8;
    opts.head_dim = 2;
    opts.d_ff = 12;
    const GradcheckResult r = gradcheck(opts);
    CHECK(r.passed());
    CHECK(r.worst_rel <= 1e-5);
}

TEST_CASE("gate limits") {
    GateParams p;
    p.w_alpha = Matrix(1, 1);
    p.w_beta = Matrix(1, 1);
    p.w_gamma = Matrix(1, 1);
    p.a_raw = softplus_inverse(1.0);
    const Vector x{0.0};
    const Gates g = compute_gates(p, x);
    CHECK(g.alpha == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g.beta == 0.5);
    CHECK(g.gamma == 0.5);
    p.b_alpha = 800.0;
    CHECK(compute_gates(p, x).alpha == doctest::Approx(0.0));
    p.b_alpha = -800.0;
    CHECK(compute_gates(p, x).alpha == doctest::Approx(1.0));
}

TEST_CASE("initial decay spans the intended range") {
    ModelConfig cfg = small_config(VariantKind::kRLA);
    cfg.n_heads = 4;
    const Model m = init_model(cfg);
    for (const auto& block : m.params.blocks) {
        double lo = 1e9, hi = 0.0;
        for (const auto& g : block.gates) {
            const double mult = decay_multiplier(g);
            lo = std::fmin(lo, mult);
            hi = std::fmax(hi, mult);
            const double alpha0 = std::exp(-mult * softplus(g.b_alpha));
            CHECK(alpha0 >= 0.9);
            CHECK(alpha0 <= 0.999 + 1e-12);
        }
        CHECK(lo == doctest::Approx(1.0));
        CHECK(hi == doctest::Approx(16.0));
    }
}

TEST_CASE("a zero input sequence gives a zero attention output") {
    // With zero input, q, k and v vanish; the block output is then the
    // residual stream plus the MLP of a zero vector, which is zero too.
    const Model m = init_model(small_config(VariantKind::kRDN));
    const Matrix zeros(5, 12);
    const Matrix out = forward_block(m.params.blocks[0], zeros, m.config);
    CHECK(out.rows() == 5);
    CHECK(max_abs(out.values()) == 0.0);
}

TEST_CASE("one head, one token: the block composes the single step by hand") {
    ModelConfig cfg = small_config(VariantKind::kRLA);
    cfg.n_heads = 1;
    cfg.head_dim = 4;
    const Model m = init_model(cfg);
    const BlockParams& p = m.params.blocks[0];
    Rng rng(Seed{57});
    const Vector x = rng.normal_vector(cfg.d_model);

    auto rms = [](const Vector& v, const Vector& scale) {
        double ss = 0.0;
        for (double e : v.values()) ss += e * e;
        const double r = 1.0 / std::sqrt(ss / double(v.dim()) + 1e-6);
        Vector y(v.dim());
        for (std::size_t j = 0; j < v.dim(); ++j) y[j] = v[j] * r * scale[j];
        return y;
    };
    const Vector xn = rms(x, p.attn_norm);
    const Gates g = compute_gates(p.gates[0], xn);
    const VariantConfig vcfg = cfg.head_variant();
    const auto [q, k] = preprocess_qk(vcfg, matvec(p.w_q, xn), matvec(p.w_k, xn));
    const auto [out, next] = step(vcfg, DualState::zeros(vcfg), {q, k, matvec(p.w_v, xn), g.alpha, g.beta, g.gamma});
    const Vector h = x + matvec(p.w_o, out.o);
    Vector up = matvec(p.mlp_up, rms(h, p.mlp_norm));
    for (double& u : up.values()) u = silu(u);
    const Vector expect = h + matvec(p.mlp_down, up);

    const Matrix got = forward_block(p, Matrix(1, cfg.d_model, x.data()), cfg);
    for (std::size_t j = 0; j < cfg.d_model; ++j) CHECK(got(0, j) == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("logit shapes, prefix runs and identical prefixes") {
    ModelConfig cfg = small_config(VariantKind::kRLA);
    cfg.n_layers = 1;
    cfg.vocab_size = 4;
    const Model m = init_model(cfg);
    const std::vector<int> full{0, 3, 1, 2, 2, 0, 1};
    const Matrix logits = forward_model(m, full);
    CHECK(logits.rows() == 7);
    CHECK(logits.cols() == 4);
    for (std::size_t len = 1; len < full.size(); ++len) {
        const Matrix prefix = forward_model(m, std::vector<int>(full.begin(), full.begin() + long(len)));
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t j = 0; j < 4; ++j) CHECK(prefix(t, j) == logits(t, j));
    }
    CHECK(forward_model(m, full) == logits);
}

TEST_CASE("tiny one-layer gradcheck for every kind and both read-outs") {
    for (VariantKind kind : {VariantKind::kSGLA, VariantKind::kRLA, VariantKind::kRDN, VariantKind::kRLANoFit}) {
        for (bool gated : {true, false}) {
            CAPTURE(variant_name(kind));
            CAPTURE(gated);
            GradcheckOptions opts;
            opts.kind = kind;
            opts.gated_output = gated;
            opts.n_layers = 1;
            opts.d_model = 8;
            opts.n_heads = 2;
            opts.head_dim = 4;
            opts.d_ff = 16;
            opts.seq_len = 12;
            const GradcheckResult r = gradcheck(opts);
            CHECK(r.failed == 0);
            CHECK(r.checked > 100);
            CHECK(r.worst_rel <= 1e-5);
        }
    }
}
