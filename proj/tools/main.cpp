// resattn <check|gradcheck|bench|train> [flags]
//
// Exit codes: 0 success, 1 check or tolerance failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include "resattn/checkpoint.hpp"
#include "resattn/checks.hpp"
#include "resattn/chunkwise.hpp"
#include "resattn/run_config.hpp"

namespace {

using namespace resattn;

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

constexpr std::size_t kGradcheckMaxModel = 32;
constexpr std::size_t kGradcheckMaxSeq = 32;

std::string join(const std::vector<std::string>& xs) {
    std::string out;
    for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
    return out;
}

int cmd_check(const std::vector<std::string>& filters, Seed seed) {
    for (const auto& name : filters) {
        if (!is_suite_name(name)) throw UsageError("unknown suite '" + name + "'; valid suites: " + join(suite_names()));
    }
    const auto& names = filters.empty() ? suite_names() : filters;
    bool ok = true;
    for (const auto& name : names) {
        const SuiteResult r = run_suite(name, seed);
        std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(16) << r.name << " max_dev "
                  << std::scientific << std::setprecision(3) << r.max_deviation << " tol " << r.tolerance << " n "
                  << r.samples << '\n';
        for (const auto& [metric, value] : r.metrics) std::cout << "     " << metric << ' ' << value << '\n';
        ok = ok && r.passed;
    }
    return ok ? kOk : kFailed;
}

int cmd_gradcheck(GradcheckOptions opts, const std::string& variant) {
    const auto kind = parse_variant(variant);
    if (!kind) throw UsageError("unknown variant '" + variant + "'");
    opts.kind = *kind;
    if (opts.d_model > kGradcheckMaxModel || opts.seq_len > kGradcheckMaxSeq) {
        throw UsageError("gradcheck is limited to d_model <= 32 and seq <= 32 (finite differences need two "
                         "forward passes per parameter)");
    }
    if (opts.seq_len == 0) throw UsageError("gradcheck needs seq >= 1");
    const GradcheckResult r = gradcheck(opts);
    std::cout << std::scientific << std::setprecision(3);
    for (const auto& g : r.groups) {
        std::cout << std::left << std::setw(28) << g.name << " worst_rel " << g.worst_rel << " checked " << g.checked
                  << (g.failed ? " FAIL" : "") << '\n';
    }
    std::cout << (r.passed() ? "PASS" : "FAIL") << " worst_rel " << r.worst_rel << " tol " << opts.tolerance
              << " checked " << r.checked << " skipped_at_clip_boundary " << r.skipped_boundary << '\n';
    return r.passed() ? kOk : kFailed;
}

int cmd_bench(BenchOptions opts, const std::string& variant, const std::string& out_path) {
    const auto kind = parse_variant(variant);
    if (!kind || (*kind != VariantKind::kSGLA && *kind != VariantKind::kRLA)) {
        throw UsageError("bench supports --variant sgla or rla, got '" + variant + "'");
    }
    opts.kind = *kind;
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + out_path);

    const auto rows = bench_scaling(opts);
    out << "variant,impl,seq_len,median_seconds\n" << std::setprecision(9);
    for (const auto& r : rows) {
        out << variant << ',' << scan_impl_name(r.impl) << ',' << r.seq_len << ',' << r.median_seconds << '\n';
    }
    if (!out.flush()) throw UsageError("cannot write " + out_path);

    std::cout << "impl        seq_len  seconds      ratio\n" << std::fixed;
    std::map<ScanImpl, double> prev;
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(11) << scan_impl_name(r.impl) << ' ' << std::right << std::setw(8)
                  << r.seq_len << "  " << std::setprecision(6) << r.median_seconds;
        if (auto it = prev.find(r.impl); it != prev.end()) {
            std::cout << "  " << std::setprecision(2) << r.median_seconds / it->second;
        }
        std::cout << '\n';
        prev[r.impl] = r.median_seconds;
    }
    return kOk;
}

struct TrainFlags {
    std::string task;
    std::string variant;
    std::string config;
    std::string out = "train.csv";
    std::string checkpoint;
    std::vector<std::string> sets;
    std::size_t steps = 0;
    bool steps_set = false;
};

int cmd_train(const TrainFlags& f, std::optional<std::uint64_t> seed_flag) {
    TrainSettings s = default_train_settings();
    if (!f.config.empty()) {
        if (!std::filesystem::exists(f.config)) throw UsageError("config file not found: " + f.config);
        for (const auto& [k, v] : load_config_file(f.config)) apply_setting(s, k, v);
    }
    for (const auto& kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        apply_setting(s, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!f.task.empty()) apply_setting(s, "task", f.task);
    if (!f.variant.empty()) apply_setting(s, "variant", f.variant);
    if (f.steps_set) s.steps = f.steps;
    if (seed_flag) s.seed = Seed{*seed_flag};
    try {
        s.task.validate();
        ModelConfig probe = s.model;
        probe.vocab_size = s.task.layout.vocab_size();
        probe.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    std::ofstream csv(f.out, std::ios::binary);
    if (!csv) throw UsageError("cannot write " + f.out);
    const TrainResult result = train(s.model, s.task, s.hyper, s.steps, s.eval_every, s.seed, &std::cout);
    result.report.write_csv(csv);
    const std::string ckpt = f.checkpoint.empty()
                                 ? std::filesystem::path(f.out).replace_extension(".ratn").string()
                                 : f.checkpoint;
    ModelParams params = result.model.params;
    save_checkpoint(ckpt, params);
    std::cout << "wrote " << f.out << " and " << ckpt << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual linear attention toolkit"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "Seed (default: RESATTN_SEED or 0)");

    auto* check = app.add_subcommand("check", "Run the invariant suites");
    std::vector<std::string> suites;
    check->add_option("--suite", suites, "Suite to run (repeatable): " + join(suite_names()));

    auto* grad = app.add_subcommand("gradcheck", "Compare backprop against finite differences");
    GradcheckOptions gopts;
    std::string grad_variant = "rla";
    grad->add_option("--variant", grad_variant, "Variant name");
    grad->add_option("--d-model", gopts.d_model, "Model width");
    grad->add_option("--heads", gopts.n_heads, "Heads");
    grad->add_option("--head-dim", gopts.head_dim, "Head width");
    grad->add_option("--d-ff", gopts.d_ff, "MLP width");
    grad->add_option("--layers", gopts.n_layers, "Layers");
    grad->add_option("--seq", gopts.seq_len, "Sequence length");
    grad->add_option("--gated-output", gopts.gated_output, "Decay the base read-out");

    auto* bench = app.add_subcommand("bench", "Time chunkwise, recurrent and quadratic scans");
    BenchOptions bopts;
    bopts.seq_lens = {1024, 2048, 4096, 8192, 16384};
    std::string bench_variant = "sgla";
    std::string bench_out = "bench.csv";
    bench->add_option("--variant", bench_variant, "sgla or rla");
    bench->add_option("--seq-lens", bopts.seq_lens, "Sequence lengths, ascending")->delimiter(',');
    bench->add_option("--chunk-size", bopts.chunk_size, "Chunk size");
    bench->add_option("--repeats", bopts.repeats, "Timed repeats per point");
    bench->add_option("--dim", bopts.dim, "Head width");
    bench->add_option("--out", bench_out, "CSV output path");

    auto* trainc = app.add_subcommand("train", "Train on a synthetic task");
    TrainFlags tflags;
    trainc->add_option("--task", tflags.task, "mqar, niah or copy");
    trainc->add_option("--variant", tflags.variant, "Variant name");
    trainc->add_option("--config", tflags.config, "key = value config file");
    trainc->add_option("--set", tflags.sets, "Override one config key (key=value, repeatable)");
    trainc->add_option("--steps", tflags.steps, "Training steps");
    trainc->add_option("--out", tflags.out, "CSV output path");
    trainc->add_option("--checkpoint", tflags.checkpoint, "Checkpoint path (default: CSV path with .ratn)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        const Seed seed = seed_flag ? Seed{*seed_flag} : default_seed();
        if (*check) return cmd_check(suites, seed);
        if (*grad) {
            gopts.seed = seed;
            return cmd_gradcheck(gopts, grad_variant);
        }
        if (*bench) {
            bopts.seed = seed;
            return cmd_bench(bopts, bench_variant, bench_out);
        }
        if (*trainc) {
            tflags.steps_set = trainc->count("--steps") > 0;
            return cmd_train(tflags, seed_flag);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailed;
    }
    return kUsage;
}
