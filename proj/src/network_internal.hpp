#pragma once

// Forward traces kept for backpropagation through time.

#include <vector>

#include "resattn/network.hpp"

namespace resattn::detail {

inline constexpr double kRmsEps = 1e-6;

// Flat per-head buffers: q, k, v are T x head_dim after preprocessing;
// s and r hold T + 1 state blocks, block t being the state before step t.
struct HeadTrace {
    std::vector<double> q, k, v;
    std::vector<double> q_sig, k_sig;  // sigmoid of the raw q, k when silu is on
    std::vector<double> alpha, beta, gamma;  // gate inputs, before pinning
    std::vector<double> s, r;
};

struct RmsTrace {
    Matrix normalized;          // x * rinv, before the scale
    std::vector<double> rinv;  // per row
};

struct LayerTrace {
    Matrix x_in;
    RmsTrace attn_rms;
    Matrix xn;
    Matrix q_raw;
    Matrix k_raw;
    Matrix v;
    Matrix z_alpha;  // T x H
    Matrix z_beta;
    Matrix z_gamma;
    std::vector<HeadTrace> heads;
    Matrix attn_out;  // T x (H * head_dim)
    Matrix h;
    RmsTrace mlp_rms;
    Matrix hn;
    Matrix up;
    Matrix up_sig;  // sigmoid(up)
    Matrix act;
};

struct ModelTrace {
    std::vector<int> tokens;
    std::vector<LayerTrace> layers;
    Matrix x_final;
    RmsTrace final_rms;
    Matrix y;
    Matrix logits;
};

Matrix rms_forward(const Matrix& x, const Vector& scale, RmsTrace* trace);

Matrix block_forward(const BlockParams& p, const Matrix& xs, const ModelConfig& cfg, LayerTrace* trace,
                     ForwardStats* stats);

Matrix model_forward(const Model& m, std::span<const int> tokens, ModelTrace* trace, ForwardStats* stats);

}  // namespace resattn::detail
