#pragma once

// Chunk-parallel evaluation of the additive (linear-attention style) update
//
//     M_t = a_t M_{t-1} + w_t u_t k_t^T
//
// Inside a chunk every readout M_{t-1} x_t or M_t x_t is the carried state
// decayed by a cumulative gate product plus a causally masked, decay
// weighted product of the stacked keys and writes. Chunks are processed in
// order, carrying the state.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "resattn/variants.hpp"

namespace resattn {

struct ChunkPlan {
    std::size_t chunk_size = 1;
    std::size_t num_chunks = 0;
    std::size_t tail_len = 0;  // length of a short final chunk, 0 if the last chunk is full

    static ChunkPlan make(std::size_t seq_len, std::size_t chunk_size);
    std::size_t chunk_begin(std::size_t chunk) const { return chunk * chunk_size; }
    std::size_t chunk_length(std::size_t chunk) const;
};

// One chunk of the recurrence; row t of keys/writes is (k_t, u_t).
struct ChunkRecurrence {
    std::span<const double> alphas;
    std::span<const double> weights;
    const Matrix& keys;
    const Matrix& writes;
};

struct ChunkReadout {
    const Matrix& queries;
    bool inclusive;  // M_t x_t when true, M_{t-1} x_t otherwise
};

struct ChunkPass {
    std::vector<Matrix> readouts;  // one (chunk_len x rows(M)) matrix per requested readout
    Matrix final_state;
};

// The blocked propagation shared by every chunkwise scan.
ChunkPass propagate_chunk(const Matrix& carried, const ChunkRecurrence& rec, std::span<const ChunkReadout> reads);

// LinearAttn, Mamba2 and SGLA. Matches scan() to rounding.
ScanResult chunk_scan_sgla(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq,
                           std::size_t chunk_size);

// RLA: the base state pass yields S_{t-1} k_t and S_{t-1} q_t for every
// position, residuals are squashed elementwise, then a second pass of the
// same machinery propagates R over (r_t, k_t).
ScanResult chunk_scan_rla(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq,
                          std::size_t chunk_size);

enum class ScanImpl { kChunkwise, kRecurrent, kQuadratic };

std::string_view scan_impl_name(ScanImpl impl);

struct BenchRow {
    ScanImpl impl;
    std::size_t seq_len;
    double median_seconds;
};

struct BenchOptions {
    VariantKind kind = VariantKind::kSGLA;
    std::vector<std::size_t> seq_lens;
    std::size_t chunk_size = 64;
    std::size_t repeats = 5;
    std::size_t dim = 64;
    std::vector<ScanImpl> impls = {ScanImpl::kChunkwise, ScanImpl::kRecurrent, ScanImpl::kQuadratic};
    Seed seed{0};
};

// Causal o_t = sum_{i<=t} v_i (k_i^T q_t) with explicit score rows.
Matrix quadratic_attention(const Matrix& q, const Matrix& k, const Matrix& v);

// Median wall time per (impl, length), one warm-up run discarded.
std::vector<BenchRow> bench_scaling(const BenchOptions& opts);

}  // namespace resattn
