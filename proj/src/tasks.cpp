#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "resattn/rng.hpp"
#include "resattn/tasks.hpp"

namespace resattn {

namespace {

std::vector<int> filler_row(const TokenLayout& layout, std::size_t len, Rng& rng) {
    std::vector<int> row(len);
    for (int& x : row) x = layout.filler(rng.below(layout.n_filler));
    return row;
}

}  // namespace

SequenceBatch gen_mqar(const TokenLayout& layout, std::size_t n_pairs, std::size_t seq_len, std::size_t batch,
                       Seed seed) {
    if (n_pairs == 0) throw std::invalid_argument("gen_mqar: n_pairs must be positive");
    if (n_pairs > layout.vocab_kv) {
        throw std::invalid_argument("gen_mqar: " + std::to_string(n_pairs) + " distinct keys need vocab_kv >= " +
                                    std::to_string(n_pairs) + ", got " + std::to_string(layout.vocab_kv));
    }
    if (seq_len < 2 * n_pairs + 2) {
        throw std::invalid_argument("gen_mqar: seq_len " + std::to_string(seq_len) + " too short for " +
                                    std::to_string(n_pairs) + " pairs");
    }
    Rng rng(seed);
    SequenceBatch out{{}, {}, "mqar"};
    const std::size_t body = seq_len - 2;
    const std::size_t free_slots = body - 2 * n_pairs;
    std::vector<std::size_t> keys(layout.vocab_kv);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<int> row = filler_row(layout, seq_len, rng);

        // Partial Fisher-Yates for distinct keys.
        for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = i;
        for (std::size_t i = 0; i < n_pairs; ++i) std::swap(keys[i], keys[i + rng.below(keys.size() - i)]);

        // Pair j starts at slot_j + 2j where the slots are a sorted draw with
        // repetition from [0, free_slots], so pairs never overlap.
        std::vector<std::size_t> slots(n_pairs);
        for (auto& s : slots) s = rng.below(free_slots + 1);
        std::sort(slots.begin(), slots.end());

        std::vector<int> values(n_pairs);
        for (std::size_t j = 0; j < n_pairs; ++j) {
            const std::size_t pos = slots[j] + 2 * j;
            values[j] = layout.value(rng.below(layout.vocab_kv));
            row[pos] = layout.key(keys[j]);
            row[pos + 1] = values[j];
        }
        const std::size_t pick = rng.below(n_pairs);
        row[seq_len - 2] = layout.query_marker();
        row[seq_len - 1] = layout.key(keys[pick]);

        std::vector<int> target(seq_len, kIgnoreTarget);
        target[seq_len - 1] = values[pick];
        out.tokens.push_back(std::move(row));
        out.targets.push_back(std::move(target));
    }
    return out;
}

SequenceBatch gen_niah_toy(const TokenLayout& layout, std::size_t haystack_len, double depth_fraction, Seed seed,
                           std::size_t batch) {
    if (haystack_len < 8) throw std::invalid_argument("gen_niah_toy: haystack_len must be at least 8");
    if (!(depth_fraction >= 0.0 && depth_fraction <= 1.0)) {
        throw std::invalid_argument("gen_niah_toy: depth_fraction outside [0, 1]");
    }
    Rng rng(seed);
    SequenceBatch out{{}, {}, "niah"};
    const auto depth = static_cast<std::size_t>(std::floor(depth_fraction * static_cast<double>(haystack_len)));
    const std::size_t pos = std::min(depth, haystack_len - 2);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<int> row = filler_row(layout, haystack_len + 2, rng);
        const int key = layout.key(rng.below(layout.vocab_kv));
        const int value = layout.value(rng.below(layout.vocab_kv));
        row[pos] = key;
        row[pos + 1] = value;
        row[haystack_len] = layout.query_marker();
        row[haystack_len + 1] = key;
        std::vector<int> target(haystack_len + 2, kIgnoreTarget);
        target[haystack_len + 1] = value;
        out.tokens.push_back(std::move(row));
        out.targets.push_back(std::move(target));
    }
    return out;
}

SequenceBatch gen_copy(const TokenLayout& layout, std::size_t n_symbols, std::size_t batch, Seed seed) {
    if (n_symbols == 0) throw std::invalid_argument("gen_copy: n_symbols must be positive");
    Rng rng(seed);
    SequenceBatch out{{}, {}, "copy"};
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<int> symbols(n_symbols);
        for (int& s : symbols) s = layout.key(rng.below(layout.vocab_kv));
        std::vector<int> row = symbols;
        row.push_back(layout.query_marker());
        row.insert(row.end(), symbols.begin(), symbols.end() - 1);
        std::vector<int> target(row.size(), kIgnoreTarget);
        for (std::size_t i = 0; i < n_symbols; ++i) target[n_symbols + i] = symbols[i];
        out.tokens.push_back(std::move(row));
        out.targets.push_back(std::move(target));
    }
    return out;
}

double lookup_oracle_accuracy(const SequenceBatch& batch, const TokenLayout& layout) {
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t b = 0; b < batch.tokens.size(); ++b) {
        const auto& row = batch.tokens[b];
        for (std::size_t t = 0; t < row.size(); ++t) {
            const int target = batch.targets[b][t];
            if (target == kIgnoreTarget) continue;
            ++total;
            const int query = row[t];
            int answer = kIgnoreTarget;
            for (std::size_t i = 0; i + 1 < t; ++i) {
                if (row[i] == query && layout.is_key(query)) {
                    answer = row[i + 1];
                    break;
                }
            }
            hits += answer == target ? 1 : 0;
        }
    }
    if (total == 0) throw std::invalid_argument("lookup_oracle_accuracy: no supervised positions");
    return static_cast<double>(hits) / static_cast<double>(total);
}

double accuracy(std::span<const Matrix> logits, std::span<const std::vector<int>> targets) {
    if (logits.size() != targets.size()) {
        throw std::invalid_argument("accuracy: " + std::to_string(logits.size()) + " logit rows vs " +
                                    std::to_string(targets.size()) + " target rows");
    }
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        if (logits[b].rows() != targets[b].size()) throw std::invalid_argument("accuracy: sequence length mismatch");
        for (std::size_t t = 0; t < targets[b].size(); ++t) {
            if (targets[b][t] == kIgnoreTarget) continue;
            const auto z = logits[b].row(t);
            // max_element returns the first maximum, i.e. the lowest id.
            const auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
            hits += best == targets[b][t] ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("accuracy: no supervised positions");
    return static_cast<double>(hits) / static_cast<double>(total);
}

void TaskConfig::validate() const {
    if (task != "mqar" && task != "niah" && task != "copy") {
        throw std::invalid_argument("unknown task '" + task + "' (expected mqar, niah or copy)");
    }
    if (batch == 0 || eval_batch == 0) throw std::invalid_argument("TaskConfig: batch sizes must be positive");
    if (task == "mqar" && (n_pairs > layout.vocab_kv || seq_len < 2 * n_pairs + 2)) {
        throw std::invalid_argument("TaskConfig: mqar needs n_pairs <= vocab_kv and seq_len >= 2 n_pairs + 2");
    }
    if (task == "niah" && seq_len < 10) throw std::invalid_argument("TaskConfig: niah needs seq_len >= 10");
    if (task == "copy" && seq_len < 2) throw std::invalid_argument("TaskConfig: copy needs seq_len >= 2");
}

SequenceBatch make_task_batch(const TaskConfig& task, std::size_t batch, Seed seed) {
    if (task.task == "mqar") return gen_mqar(task.layout, task.n_pairs, task.seq_len, batch, seed);
    if (task.task == "copy") return gen_copy(task.layout, task.seq_len / 2, batch, seed);
    if (task.task == "niah") {
        // Fresh depth per row.
        Rng rng(seed);
        SequenceBatch out{{}, {}, "niah"};
        for (std::size_t b = 0; b < batch; ++b) {
            SequenceBatch one = gen_niah_toy(task.layout, task.seq_len - 2, rng.uniform(), Seed{rng.next_u64()});
            out.tokens.push_back(std::move(one.tokens[0]));
            out.targets.push_back(std::move(one.targets[0]));
        }
        return out;
    }
    throw std::invalid_argument("unknown task '" + task.task + "'");
}

}  // namespace resattn
