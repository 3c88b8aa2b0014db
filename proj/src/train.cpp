#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "resattn/rng.hpp"
#include "resattn/tasks.hpp"

namespace resattn {

namespace {

constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7A11;

// Next-token targets everywhere, keeping the task's own targets where set.
void add_lm_targets(SequenceBatch& batch) {
    for (std::size_t b = 0; b < batch.tokens.size(); ++b) {
        auto& target = batch.targets[b];
        const auto& row = batch.tokens[b];
        for (std::size_t t = 0; t + 1 < row.size(); ++t) {
            if (target[t] == kIgnoreTarget) target[t] = row[t + 1];
        }
    }
}

double eval_accuracy(const Model& model, const SequenceBatch& batch) {
    std::vector<Matrix> logits;
    logits.reserve(batch.tokens.size());
    for (const auto& row : batch.tokens) logits.push_back(forward_model(model, row));
    return accuracy(logits, batch.targets);
}

}  // namespace

void TrainReport::write_csv(std::ostream& out) const {
    out << "step,loss,accuracy,seconds\n";
    out << std::setprecision(17);
    for (const auto& r : rows) out << r.step << ',' << r.loss << ',' << r.accuracy << ',' << r.seconds << '\n';
}

TrainResult train(const ModelConfig& model_cfg, const TaskConfig& task, const OptimizerHyper& hyper,
                  std::size_t steps, std::size_t eval_every, Seed seed, std::ostream* log) {
    task.validate();
    if (eval_every == 0) throw std::invalid_argument("train: eval_every must be positive");

    ModelConfig cfg = model_cfg;
    cfg.vocab_size = task.layout.vocab_size();
    cfg.seed = derive_seed(seed, kInitStream);
    TrainResult result{{}, init_model(cfg)};
    Model& model = result.model;

    OptimizerHyper h = hyper;
    h.total_steps = steps;
    AdamW opt(model.params, h);

    const SequenceBatch eval = make_task_batch(task, task.eval_batch, derive_seed(seed, kEvalStream));
    const Seed train_seed = derive_seed(seed, kTrainStream);
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    auto record = [&](std::size_t step, double loss) {
        const TrainRow row{step, loss, eval_accuracy(model, eval), elapsed()};
        result.report.rows.push_back(row);
        if (log) {
            *log << "step " << row.step << " loss " << std::setprecision(6) << row.loss << " acc " << row.accuracy
                 << " t " << std::setprecision(4) << row.seconds << "s" << std::endl;
        }
    };

    record(0, evaluate_loss(model, eval.tokens, eval.targets));
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t step = 1; step <= steps; ++step) {
        SequenceBatch batch = make_task_batch(task, task.batch, derive_seed(train_seed, step));
        if (task.full_lm_loss) add_lm_targets(batch);
        LossAndGrads lg = [&] {
            try {
                return backward(model, batch.tokens, batch.targets);
            } catch (const std::runtime_error&) {
                ForwardStats stats;
                const double loss = evaluate_loss(model, batch.tokens, batch.targets, &stats);
                std::ostringstream msg;
                msg << "train: non-finite loss at step " << step << " (loss " << loss << ", max |activation| "
                    << stats.max_abs_activation << ")";
                throw std::runtime_error(msg.str());
            }
        }();
        opt.step(model.params, lg.grads);
        loss_sum += lg.loss;
        ++loss_count;
        if (step % eval_every == 0 || step == steps) {
            record(step, loss_sum / static_cast<double>(loss_count));
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    return result;
}

}  // namespace resattn
