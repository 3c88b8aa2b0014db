#pragma once

// A second, deliberately plain implementation of the model forward pass in
// extended precision. It reads the same double parameters but shares no
// code with the network module, so it serves as the oracle for the forward
// pass and as the loss evaluator for finite-difference gradient checks
// (whose noise floor is set by the rounding error of the loss).

#include <cstdint>
#include <span>
#include <vector>

#include "resattn/network.hpp"

namespace resattn {

using Extended = long double;

struct ReferenceForward {
    std::vector<std::vector<Extended>> logits;  // one row per position
    std::vector<std::uint8_t> clip_pattern;     // same layout as ForwardStats::clip_pattern
};

ReferenceForward reference_forward(const Model& m, std::span<const int> tokens);

// Mean cross entropy over supervised positions of a batch; 0 when nothing
// is supervised. Appends every row's clip pattern when requested.
Extended reference_loss(const Model& m, std::span<const std::vector<int>> tokens,
                        std::span<const std::vector<int>> targets, std::vector<std::uint8_t>* clip_pattern = nullptr);

}  // namespace resattn
