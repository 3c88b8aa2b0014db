#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "resattn/optimizer.hpp"
#include "resattn/rng.hpp"

using namespace resattn;

namespace {

Model tiny() {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 4;
    cfg.n_heads = 1;
    cfg.head_dim = 2;
    cfg.d_ff = 6;
    cfg.vocab_size = 5;
    cfg.init_std = 0.5;
    return init_model(cfg);
}

void fill(ModelParams& p, Rng& rng, double scale) {
    for (auto& ref : param_refs(p))
        for (double& x : ref.values) x = scale * rng.normal();
}

}  // namespace

TEST_CASE("schedule: linear warmup, cosine decay, floor") {
    OptimizerHyper h;
    h.peak_lr = 1.0;
    h.min_lr = 0.1;
    h.warmup_steps = 4;
    h.total_steps = 14;
    CHECK(learning_rate(h, 0) == doctest::Approx(0.25));
    CHECK(learning_rate(h, 3) == doctest::Approx(1.0));
    CHECK(learning_rate(h, 4) == doctest::Approx(1.0));
    CHECK(learning_rate(h, 9) == doctest::Approx(0.55));
    CHECK(learning_rate(h, 14) == doctest::Approx(0.1));
    CHECK(learning_rate(h, 100) == doctest::Approx(0.1));
    for (std::size_t s = 5; s < 14; ++s) CHECK(learning_rate(h, s) < learning_rate(h, s - 1));
}

TEST_CASE("first AdamW step has the closed form lr * (sign(g) + wd * p)") {
    Model m = tiny();
    Rng rng(Seed{61});
    ModelParams grads = zeros_like(m.params);
    fill(grads, rng, 0.01);
    OptimizerHyper h;
    h.grad_clip = 0.0;
    h.warmup_steps = 0;
    h.total_steps = 10;
    h.peak_lr = 0.01;
    const ModelParams before = m.params;
    AdamW opt(m.params, h);
    const double lr = opt.step(m.params, grads);
    CHECK(lr == doctest::Approx(0.01));
    ModelParams b = before;
    auto pb = param_refs(b);
    auto pa = param_refs(m.params);
    auto pg = param_refs(grads);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double wd = pa[i].weight_decay ? h.weight_decay : 0.0;
        for (std::size_t j = 0; j < pa[i].values.size(); ++j) {
            const double g = pg[i].values[j];
            const double expect = pb[i].values[j] - lr * (g / (std::abs(g) + h.eps) + wd * pb[i].values[j]);
            CHECK(pa[i].values[j] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("norm clipping") {
    Model m = tiny();
    Rng rng(Seed{62});
    ModelParams g = zeros_like(m.params);
    fill(g, rng, 10.0);
    const double before = global_norm(g);
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(before));
    CHECK(global_norm(g) <= 1.0 + 1e-9);
    ModelParams small = zeros_like(m.params);
    fill(small, rng, 1e-4);
    const ModelParams copy = small;
    clip_global_norm(small, 1.0);
    CHECK(small.embedding == copy.embedding);
}

TEST_CASE("norm scales and gate parameters are not decayed") {
    Model m = tiny();
    for (const auto& ref : param_refs(m.params)) {
        CAPTURE(ref.name);
        const bool exempt = ref.name.find("norm") != std::string::npos || ref.name.find("gates") != std::string::npos;
        CHECK(ref.weight_decay == !exempt);
    }
}

TEST_CASE("zero gradients without weight decay leave parameters alone") {
    Model m = tiny();
    ModelParams g = zeros_like(m.params);
    OptimizerHyper h;
    h.weight_decay = 0.0;
    const ModelParams before = m.params;
    AdamW opt(m.params, h);
    for (int i = 0; i < 3; ++i) opt.step(m.params, g);
    ModelParams b = before;
    auto rb = param_refs(b);
    auto ra = param_refs(m.params);
    for (std::size_t i = 0; i < ra.size(); ++i)
        for (std::size_t j = 0; j < ra[i].values.size(); ++j) CHECK(ra[i].values[j] == rb[i].values[j]);
}
