#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "resattn/chunkwise.hpp"
#include "resattn/rng.hpp"

namespace resattn {

namespace {

struct BenchInputs {
    std::vector<StepInput> steps;
    Matrix q;
    Matrix k;
    Matrix v;
};

BenchInputs make_inputs(std::size_t len, std::size_t dim, Rng& rng) {
    BenchInputs in{{}, Matrix(len, dim), Matrix(len, dim), Matrix(len, dim)};
    in.steps.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
        StepInput s;
        s.q = l2_normalize(rng.normal_vector(dim));
        s.k = l2_normalize(rng.normal_vector(dim));
        s.v = rng.normal_vector(dim);
        s.alpha = rng.uniform(0.9, 1.0);
        s.beta = rng.uniform();
        s.gamma = rng.uniform();
        std::copy(s.q.values().begin(), s.q.values().end(), in.q.row(t).begin());
        std::copy(s.k.values().begin(), s.k.values().end(), in.k.row(t).begin());
        std::copy(s.v.values().begin(), s.v.values().end(), in.v.row(t).begin());
        in.steps.push_back(std::move(s));
    }
    return in;
}

// Keeps results observable so the timed work is not elided.
volatile double g_sink = 0.0;

double run_once(ScanImpl impl, const VariantConfig& cfg, const BenchInputs& in, std::size_t chunk_size) {
    const auto start = std::chrono::steady_clock::now();
    const DualState init = DualState::zeros(cfg);
    switch (impl) {
        case ScanImpl::kChunkwise: {
            const ScanResult r = cfg.kind == VariantKind::kRLA ? chunk_scan_rla(cfg, init, in.steps, chunk_size)
                                                               : chunk_scan_sgla(cfg, init, in.steps, chunk_size);
            g_sink = g_sink + r.final_state.s(0, 0);
            break;
        }
        case ScanImpl::kRecurrent: {
            const ScanResult r = scan(cfg, init, in.steps);
            g_sink = g_sink + r.final_state.s(0, 0);
            break;
        }
        case ScanImpl::kQuadratic: {
            const Matrix o = quadratic_attention(in.q, in.k, in.v);
            g_sink = g_sink + o(o.rows() - 1, 0);
            break;
        }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    return elapsed.count();
}

}  // namespace

std::vector<BenchRow> bench_scaling(const BenchOptions& opts) {
    if (!std::is_sorted(opts.seq_lens.begin(), opts.seq_lens.end())) {
        throw std::invalid_argument("bench_scaling: seq_lens must be sorted ascending");
    }
    if (opts.kind != VariantKind::kSGLA && opts.kind != VariantKind::kRLA) {
        throw std::invalid_argument("bench_scaling: chunkwise kernels exist for sgla and rla only");
    }
    if (opts.repeats < 1) throw std::invalid_argument("bench_scaling: repeats must be at least 1");

    VariantConfig cfg;
    cfg.kind = opts.kind;
    cfg.d_k = opts.dim;
    cfg.d_v = opts.dim;

    std::vector<BenchRow> rows;
    Rng rng(opts.seed);
    for (std::size_t len : opts.seq_lens) {
        const BenchInputs in = make_inputs(len, opts.dim, rng);
        for (ScanImpl impl : opts.impls) {
            run_once(impl, cfg, in, opts.chunk_size);
            std::vector<double> times;
            for (std::size_t r = 0; r < opts.repeats; ++r) times.push_back(run_once(impl, cfg, in, opts.chunk_size));
            std::sort(times.begin(), times.end());
            const std::size_t mid = times.size() / 2;
            const double median = times.size() % 2 == 1 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
            rows.push_back({impl, len, median});
        }
    }
    return rows;
}

}  // namespace resattn
