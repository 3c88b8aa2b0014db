#pragma once

// Decoder language model built around the gated attention variants:
//
//   x -> RMSNorm -> per-head q/k/v + gates -> scan -> W_o -> + x
//     -> RMSNorm -> W_up -> silu -> W_down -> + ...
//
// with analytic gradients by backpropagation through time over the
// recurrent form of each head.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "resattn/core_math.hpp"
#include "resattn/variants.hpp"

namespace resattn {

// Target id that excludes a position from the loss.
inline constexpr int kIgnoreTarget = -1;

struct GateParams {
    Matrix w_alpha;  // 1 x d_model
    double b_alpha = 0.0;
    double a_raw = 0.0;  // decay multiplier is softplus(a_raw)
    Matrix w_beta;       // 1 x d_model
    Matrix w_gamma;      // 1 x d_model
};

struct Gates {
    double alpha;
    double beta;
    double gamma;
};

double decay_multiplier(const GateParams& p);

// alpha = exp(-softplus(a_raw) * softplus(w_alpha x + b_alpha)),
// beta = sigmoid(w_beta x), gamma = sigmoid(w_gamma x).
Gates compute_gates(const GateParams& p, const Vector& x);

struct BlockParams {
    Vector attn_norm;
    Matrix w_q;  // (n_heads * head_dim) x d_model
    Matrix w_k;
    Matrix w_v;
    Matrix w_o;  // d_model x (n_heads * head_dim)
    std::vector<GateParams> gates;  // one per head
    Vector mlp_norm;
    Matrix mlp_up;    // d_ff x d_model
    Matrix mlp_down;  // d_model x d_ff
};

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 128;
    std::size_t n_heads = 2;
    std::size_t head_dim = 32;
    std::size_t d_ff = 512;
    std::size_t vocab_size = 0;
    VariantConfig variant;
    Seed seed{0};
    double init_std = 0.02;
    // Range of the initial per-head decay alpha.
    double alpha_init_min = 0.9;
    double alpha_init_max = 0.999;
    // Forces gamma = 0 in every head, switching the correction read-out off.
    bool disable_correction = false;

    // The per-head variant config (d_k = d_v = head_dim).
    VariantConfig head_variant() const;
    void validate() const;
};

struct ModelParams {
    Matrix embedding;  // vocab x d_model
    std::vector<BlockParams> blocks;
    Vector final_norm;
    Matrix unembed;  // vocab x d_model
};

using Gradients = ModelParams;

// A flat view of one parameter tensor.
struct ParamRef {
    std::string name;
    std::span<double> values;
    std::vector<std::size_t> shape;
    bool weight_decay;
};

// Every parameter tensor, sorted by name.
std::vector<ParamRef> param_refs(ModelParams& params);
std::size_t param_count(const ModelParams& params);
ModelParams zeros_like(const ModelParams& params);

struct Model {
    ModelConfig config;
    ModelParams params;
};

Model init_model(const ModelConfig& cfg);

// One block over a sequence (rows are positions).
Matrix forward_block(const BlockParams& p, const Matrix& xs, const ModelConfig& cfg);

struct ForwardStats {
    double max_abs_activation = 0.0;
    double max_abs_residual = 0.0;
    // One flag per residual entry: true when |v - S k| <= c.
    std::vector<std::uint8_t> clip_pattern;
};

// Logits, one row per position.
Matrix forward_model(const Model& m, std::span<const int> tokens, ForwardStats* stats = nullptr);

struct LossAndGrads {
    double loss = 0.0;
    Gradients grads;
    std::size_t supervised = 0;
    double max_abs_activation = 0.0;
};

// Mean cross entropy over all supervised positions of the batch, scaled by
// loss_scale, and its gradient.
LossAndGrads backward(const Model& m, std::span<const std::vector<int>> tokens,
                      std::span<const std::vector<int>> targets, double loss_scale = 1.0);

// The same loss without gradients.
double evaluate_loss(const Model& m, std::span<const std::vector<int>> tokens,
                     std::span<const std::vector<int>> targets, ForwardStats* stats = nullptr);

}  // namespace resattn
