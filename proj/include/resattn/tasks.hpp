#pragma once

// Synthetic recall tasks and the training loop that drives them.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "resattn/network.hpp"
#include "resattn/optimizer.hpp"

namespace resattn {

// Disjoint token id ranges: keys, values, filler, then one query marker.
struct TokenLayout {
    std::size_t vocab_kv = 16;
    std::size_t n_filler = 8;

    int key(std::size_t i) const { return static_cast<int>(i); }
    int value(std::size_t i) const { return static_cast<int>(vocab_kv + i); }
    int filler(std::size_t i) const { return static_cast<int>(2 * vocab_kv + i); }
    int query_marker() const { return static_cast<int>(2 * vocab_kv + n_filler); }
    std::size_t vocab_size() const { return 2 * vocab_kv + n_filler + 1; }
    bool is_key(int id) const { return id >= 0 && static_cast<std::size_t>(id) < vocab_kv; }
};

struct SequenceBatch {
    std::vector<std::vector<int>> tokens;
    std::vector<std::vector<int>> targets;  // kIgnoreTarget where unsupervised
    std::string task;
};

// Multi-query associative recall: n_pairs adjacent (key, value) pairs at
// random positions among filler, then the query marker and one of the keys.
// The only supervised position is the last, whose target is that key's value.
SequenceBatch gen_mqar(const TokenLayout& layout, std::size_t n_pairs, std::size_t seq_len, std::size_t batch,
                       Seed seed);

// One (key, value) needle at floor(depth * haystack_len) (capped so the pair
// fits) in a filler haystack, followed by the query marker and the key.
SequenceBatch gen_niah_toy(const TokenLayout& layout, std::size_t haystack_len, double depth_fraction, Seed seed,
                           std::size_t batch = 1);

// Random key-range symbols, the query marker, then the symbols again;
// every position from the marker on predicts the next symbol.
SequenceBatch gen_copy(const TokenLayout& layout, std::size_t n_symbols, std::size_t batch, Seed seed);

// Answers each supervised position by finding the query key earlier in the
// row and reading the token after it. Only meaningful for mqar and niah.
double lookup_oracle_accuracy(const SequenceBatch& batch, const TokenLayout& layout);

// Fraction of supervised positions whose argmax (lowest id on ties) hits
// the target. Throws if nothing is supervised.
double accuracy(std::span<const Matrix> logits, std::span<const std::vector<int>> targets);

struct TaskConfig {
    std::string task = "mqar";  // mqar | niah | copy
    TokenLayout layout;
    std::size_t n_pairs = 4;
    std::size_t seq_len = 64;
    std::size_t batch = 32;
    std::size_t eval_batch = 256;
    bool full_lm_loss = false;

    void validate() const;
};

SequenceBatch make_task_batch(const TaskConfig& task, std::size_t batch, Seed seed);

struct TrainRow {
    std::size_t step;
    double loss;
    double accuracy;
    double seconds;
};

struct TrainReport {
    std::vector<TrainRow> rows;

    void write_csv(std::ostream& out) const;
};

struct TrainResult {
    TrainReport report;
    Model model;
};

// Deterministic given seed, apart from the seconds column. Evaluates on a
// fixed held-out batch at step 0 and every eval_every steps (and at the end).
TrainResult train(const ModelConfig& model_cfg, const TaskConfig& task, const OptimizerHyper& hyper,
                  std::size_t steps, std::size_t eval_every, Seed seed, std::ostream* log = nullptr);

}  // namespace resattn
