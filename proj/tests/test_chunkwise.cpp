#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "resattn/checks.hpp"
#include "resattn/chunkwise.hpp"

using namespace resattn;

namespace {

VariantConfig config(VariantKind kind, std::size_t d) {
    VariantConfig cfg;
    cfg.kind = kind;
    cfg.d_k = cfg.d_v = d;
    return cfg;
}

double result_diff(const ScanResult& a, const ScanResult& b) {
    double w = 0.0;
    for (std::size_t t = 0; t < a.outputs.size(); ++t) {
        w = std::fmax(w, max_abs_diff(a.outputs[t].o.values(), b.outputs[t].o.values()));
        if (a.outputs[t].r) w = std::fmax(w, max_abs_diff(a.outputs[t].r->values(), b.outputs[t].r->values()));
    }
    w = std::fmax(w, max_abs_diff(a.final_state.s.values(), b.final_state.s.values()));
    return std::fmax(w, max_abs_diff(a.final_state.r.values(), b.final_state.r.values()));
}

}  // namespace

TEST_CASE("chunk plans") {
    const ChunkPlan p = ChunkPlan::make(10, 4);
    CHECK(p.num_chunks == 3);
    CHECK(p.tail_len == 2);
    CHECK(p.chunk_length(0) == 4);
    CHECK(p.chunk_length(2) == 2);
    CHECK(p.chunk_begin(2) == 8);
    CHECK(ChunkPlan::make(8, 4).chunk_length(1) == 4);
    CHECK(ChunkPlan::make(0, 4).num_chunks == 0);
    CHECK_THROWS_AS(ChunkPlan::make(8, 0), std::invalid_argument);
}

TEST_CASE("propagate_chunk against stepping the recurrence") {
    Rng rng(Seed{41});
    const std::size_t n = 7, dk = 3, dv = 4;
    const Matrix m0 = rng.normal_matrix(dv, dk);
    const Matrix keys = rng.normal_matrix(n, dk);
    const Matrix writes = rng.normal_matrix(n, dv);
    const Matrix qs = rng.normal_matrix(n, dk);
    std::vector<double> a(n), w(n);
    for (std::size_t t = 0; t < n; ++t) {
        a[t] = rng.uniform(0.5, 1.0);
        w[t] = rng.uniform();
    }
    const ChunkReadout reads[] = {{qs, false}, {qs, true}};
    const ChunkPass pass = propagate_chunk(m0, {a, w, keys, writes}, reads);

    Matrix m = m0;
    for (std::size_t t = 0; t < n; ++t) {
        const Vector q(std::vector<double>(qs.row(t).begin(), qs.row(t).end()));
        const Vector before = matvec(m, q);
        for (std::size_t i = 0; i < dv; ++i)
            for (std::size_t j = 0; j < dk; ++j) m(i, j) = a[t] * m(i, j) + w[t] * writes(t, i) * keys(t, j);
        const Vector after = matvec(m, q);
        for (std::size_t i = 0; i < dv; ++i) {
            CHECK(std::abs(pass.readouts[0](t, i) - before[i]) < 1e-12);
            CHECK(std::abs(pass.readouts[1](t, i) - after[i]) < 1e-12);
        }
    }
    CHECK(max_abs_diff(pass.final_state.values(), m.values()) < 1e-12);
}

TEST_CASE("chunked scans match the recurrent scan for every chunk size") {
    Rng rng(Seed{42});
    for (VariantKind kind : {VariantKind::kLinearAttn, VariantKind::kMamba2, VariantKind::kSGLA}) {
        const VariantConfig cfg = config(kind, 5);
        const auto seq = random_inputs(rng, 37, 5, 5);
        const DualState init{rng.normal_matrix(5, 5), Matrix(5, 5)};
        const ScanResult ref = scan(cfg, init, seq);
        for (std::size_t c : {1u, 2u, 5u, 8u, 37u, 64u}) CHECK(result_diff(chunk_scan_sgla(cfg, init, seq, c), ref) < 1e-10);
    }
    for (bool clipped : {true, false}) {
        VariantConfig cfg = config(VariantKind::kRLA, 5);
        if (!clipped) cfg.squash = ResidualSquash::kTanh;
        const auto seq = random_inputs(rng, 37, 5, 5, 2.0);
        const DualState init{rng.normal_matrix(5, 5), rng.normal_matrix(5, 5)};
        const ScanResult ref = scan(cfg, init, seq);
        for (std::size_t c : {1u, 3u, 16u, 40u}) CHECK(result_diff(chunk_scan_rla(cfg, init, seq, c), ref) < 1e-10);
    }
}

TEST_CASE("chunked scans reject unsupported kinds and bad shapes") {
    Rng rng(Seed{43});
    const auto seq = random_inputs(rng, 4, 3, 3);
    const VariantConfig dn = config(VariantKind::kDeltaNet, 3);
    CHECK_THROWS_AS(chunk_scan_sgla(dn, DualState::zeros(dn), seq, 2), std::invalid_argument);
    const VariantConfig rla = config(VariantKind::kRLA, 3);
    CHECK_THROWS_AS(chunk_scan_rla(rla, DualState{Matrix(2, 2), Matrix(3, 3)}, seq, 2), std::invalid_argument);
    CHECK_THROWS_AS(chunk_scan_rla(rla, DualState::zeros(rla), seq, 0), std::invalid_argument);
}

TEST_CASE("quadratic attention is ungated linear attention") {
    Rng rng(Seed{44});
    const std::size_t n = 20, d = 4;
    const Matrix q = rng.normal_matrix(n, d);
    const Matrix k = rng.normal_matrix(n, d);
    const Matrix v = rng.normal_matrix(n, d);
    const Matrix o = quadratic_attention(q, k, v);
    std::vector<StepInput> seq;
    auto row = [](const Matrix& m, std::size_t t) { return Vector(std::vector<double>(m.row(t).begin(), m.row(t).end())); };
    for (std::size_t t = 0; t < n; ++t) seq.push_back({row(q, t), row(k, t), row(v, t), 1.0, 1.0, 1.0});
    const VariantConfig cfg = config(VariantKind::kLinearAttn, d);
    const ScanResult ref = scan(cfg, DualState::zeros(cfg), seq);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(o(t, i) - ref.outputs[t].o[i]) < 1e-12);
}

TEST_CASE("bench reports one row per impl and length") {
    BenchOptions opts;
    opts.seq_lens = {16, 32};
    opts.repeats = 1;
    opts.dim = 8;
    opts.chunk_size = 8;
    for (VariantKind kind : {VariantKind::kSGLA, VariantKind::kRLA}) {
        opts.kind = kind;
        const auto rows = bench_scaling(opts);
        CHECK(rows.size() == 6);
        for (const auto& r : rows) CHECK(r.median_seconds >= 0.0);
    }
    opts.kind = VariantKind::kDeltaNet;
    CHECK_THROWS_AS(bench_scaling(opts), std::invalid_argument);
}
