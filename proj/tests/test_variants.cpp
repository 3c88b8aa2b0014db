#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <vector>

#include "resattn/checks.hpp"
#include "resattn/variants.hpp"

using namespace resattn;

namespace {

using Grid = std::vector<std::vector<double>>;

// Straight transliteration of the update table with plain arrays.
struct Naive {
    VariantConfig cfg;
    Grid s, r;

    explicit Naive(const VariantConfig& c) : cfg(c), s(c.d_v, std::vector<double>(c.d_k)), r(s) {}

    std::vector<double> apply(const Grid& m, const Vector& x) const {
        std::vector<double> y(m.size(), 0.0);
        for (std::size_t i = 0; i < m.size(); ++i)
            for (std::size_t j = 0; j < x.dim(); ++j) y[i] += m[i][j] * x[j];
        return y;
    }

    std::vector<double> step(const StepInput& in) {
        double a = in.alpha, b = in.beta, g = in.gamma;
        if (cfg.kind == VariantKind::kLinearAttn) a = b = 1.0;
        if (cfg.kind == VariantKind::kMamba2) b = 1.0;
        if (cfg.kind == VariantKind::kDeltaNet) a = 1.0;
        if (cfg.tie_gamma_to_beta) g = b;
        const std::size_t n = cfg.d_v, m = cfg.d_k;
        const auto sk = apply(s, in.k);
        const auto sq = apply(s, in.q);
        std::vector<double> o(n);

        if (!is_residual_kind(cfg.kind)) {
            // The full state after the update, read with q.
            for (std::size_t i = 0; i < n; ++i) {
                const double u = is_delta_kind(cfg.kind) ? in.v[i] - a * sk[i] : in.v[i];
                for (std::size_t j = 0; j < m; ++j) s[i][j] = a * s[i][j] + b * u * in.k[j];
            }
            return apply(s, in.q);
        }

        std::vector<double> res(n);
        for (std::size_t i = 0; i < n; ++i) {
            res[i] = in.v[i] - sk[i];
            if (cfg.clip_c) res[i] = std::fmin(std::fmax(res[i], -*cfg.clip_c), *cfg.clip_c);
        }
        const auto rk = apply(r, in.k);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                if (cfg.kind == VariantKind::kRLA) r[i][j] = a * r[i][j] + g * res[i] * in.k[j];
                if (cfg.kind == VariantKind::kRDN) r[i][j] = a * r[i][j] + g * (res[i] - a * rk[i]) * in.k[j];
                if (cfg.kind == VariantKind::kRLANoFit) r[i][j] = res[i] * in.k[j];
            }
        }
        const auto rq = apply(r, in.q);
        for (std::size_t i = 0; i < n; ++i) o[i] = a * sq[i] + g * rq[i];
        for (std::size_t i = 0; i < n; ++i) {
            const double u = cfg.kind == VariantKind::kRDN ? in.v[i] - a * sk[i] : in.v[i];
            for (std::size_t j = 0; j < m; ++j) s[i][j] = a * s[i][j] + b * u * in.k[j];
        }
        return o;
    }
};

VariantConfig config(VariantKind kind, std::size_t d) {
    VariantConfig cfg;
    cfg.kind = kind;
    cfg.d_k = d;
    cfg.d_v = d;
    return cfg;
}

}  // namespace

TEST_CASE("every kind matches the plain transliteration") {
    Rng rng(Seed{21});
    for (VariantKind kind : kAllVariantKinds) {
        CAPTURE(variant_name(kind));
        for (bool tie : {false, true}) {
            VariantConfig cfg = config(kind, 6);
            cfg.tie_gamma_to_beta = tie && is_residual_kind(kind);
            const auto seq = random_inputs(rng, 40, 6, 6, 1.5);
            Naive naive(cfg);
            const ScanResult res = scan(cfg, DualState::zeros(cfg), seq);
            double worst = 0.0;
            for (std::size_t t = 0; t < seq.size(); ++t) {
                const auto o = naive.step(seq[t]);
                for (std::size_t i = 0; i < o.size(); ++i) worst = std::fmax(worst, std::abs(o[i] - res.outputs[t].o[i]));
            }
            CHECK(worst < 1e-12);
            for (std::size_t i = 0; i < 6; ++i)
                for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(naive.s[i][j] - res.final_state.s(i, j)) < 1e-12);
        }
    }
}

TEST_CASE("outputs split into base and correction") {
    Rng rng(Seed{22});
    for (VariantKind kind : kAllVariantKinds) {
        const VariantConfig cfg = config(kind, 5);
        const auto seq = random_inputs(rng, 20, 5, 5);
        for (const auto& out : scan(cfg, DualState::zeros(cfg), seq).outputs) {
            CHECK(max_abs_diff((out.base + out.correction).values(), out.o.values()) == 0.0);
            CHECK(out.r.has_value() == is_residual_kind(kind));
        }
    }
}

TEST_CASE("decomposable kinds read the updated state") {
    Rng rng(Seed{23});
    for (VariantKind kind : kDecomposableKinds) {
        const VariantConfig cfg = config(kind, 8);
        const auto seq = random_inputs(rng, 64, 8, 8);
        CHECK(decomposition_identity(cfg, DualState::zeros(cfg), seq) < 1e-12);
    }
    CHECK_THROWS_AS(decomposition_identity(config(VariantKind::kRLA, 4), DualState::zeros(config(VariantKind::kRLA, 4)),
                                           random_inputs(rng, 2, 4, 4)),
                    std::invalid_argument);
}

TEST_CASE("unit alpha and beta on an ungated kind leave linear attention") {
    Rng rng(Seed{24});
    auto seq = random_inputs(rng, 30, 4, 4);
    for (auto& in : seq) in.alpha = in.beta = 1.0;
    const VariantConfig la = config(VariantKind::kLinearAttn, 4);
    const VariantConfig sg = config(VariantKind::kSGLA, 4);
    const auto a = scan(la, DualState::zeros(la), seq);
    const auto b = scan(sg, DualState::zeros(sg), seq);
    for (std::size_t t = 0; t < seq.size(); ++t) CHECK(a.outputs[t].o == b.outputs[t].o);
}

TEST_CASE("residual with and without clipping") {
    const Matrix s(2, 2, {1.0, 0.0, 0.0, 1.0});
    const Vector k{3.0, -0.5};
    const Vector v{0.0, 0.0};
    CHECK(residual(s, k, v, std::nullopt) == Vector{-3.0, 0.5});
    CHECK(residual(s, k, v, 1.0) == Vector{-1.0, 0.5});
    VariantConfig cfg = config(VariantKind::kRLA, 2);
    cfg.squash = ResidualSquash::kTanh;
    CHECK(pseudo_residual_for(cfg, s, k, v)[0] == doctest::Approx(std::tanh(-3.0)));
    CHECK_THROWS_AS(residual(s, Vector{1.0}, v, 1.0), std::invalid_argument);
}

TEST_CASE("names round trip") {
    for (VariantKind kind : kAllVariantKinds) CHECK(parse_variant(variant_name(kind)) == kind);
    CHECK_FALSE(parse_variant("mamba3").has_value());
}

TEST_CASE("bad inputs are rejected with context") {
    const VariantConfig cfg = config(VariantKind::kSGLA, 3);
    StepInput in{Vector(3), Vector(3), Vector(3), 1.5, 0.5, 0.5};
    CHECK_THROWS_WITH_AS(step(cfg, DualState::zeros(cfg), in), doctest::Contains("alpha"), std::invalid_argument);
    in.alpha = 0.5;
    in.v = Vector(2);
    CHECK_THROWS_WITH_AS(step(cfg, DualState::zeros(cfg), in), doctest::Contains("sgla"), std::invalid_argument);
    VariantConfig bad = cfg;
    bad.clip_c = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.d_k = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("preprocessing applies silu then normalizes") {
    VariantConfig cfg = config(VariantKind::kRLA, 3);
    const Vector q{1.0, -2.0, 0.5};
    const auto [qo, ko] = preprocess_qk(cfg, q, q);
    CHECK(norm2(qo) == doctest::Approx(1.0));
    CHECK(qo[0] / qo[2] == doctest::Approx(silu(1.0) / silu(0.5)));
    cfg.use_silu = false;
    cfg.use_l2_norm = false;
    CHECK(preprocess_qk(cfg, q, q).first == q);
}
