#pragma once

// Self-verification suites shared by the CLI and the acceptance tests.
// Every suite is a pure function of its seed; the digest hashes every
// number the suite computed so repeated runs can be compared bit for bit.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "resattn/network.hpp"
#include "resattn/rng.hpp"
#include "resattn/variants.hpp"

namespace resattn {

// FNV-1a over the bit patterns of doubles.
class Digest {
public:
    void add(double x);
    void add(std::span<const double> xs);
    void add(const Vector& v) { add(v.values()); }
    void add(const Matrix& m) { add(m.values()); }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 14695981039346656037ull;
};

// Random step inputs: unit q and k, standard normal v, alpha in
// U(0.9, 1), beta and gamma in U(0, 1). q, k and v are then scaled.
std::vector<StepInput> random_inputs(Rng& rng, std::size_t len, std::size_t d_k, std::size_t d_v,
                                     double scale = 1.0);

struct SuiteResult {
    std::string name;
    bool passed = false;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    std::size_t samples = 0;
    std::uint64_t digest = 0;
    std::vector<std::pair<std::string, double>> metrics;
};

const std::vector<std::string>& suite_names();
bool is_suite_name(const std::string& name);

// Throws std::invalid_argument for an unknown name.
SuiteResult run_suite(const std::string& name, Seed seed);

struct GradcheckOptions {
    VariantKind kind = VariantKind::kRLA;
    bool gated_output = true;
    std::size_t n_layers = 2;
    std::size_t d_model = 16;
    std::size_t n_heads = 2;
    std::size_t head_dim = 4;
    std::size_t d_ff = 32;
    std::size_t vocab_size = 11;
    std::size_t seq_len = 12;
    double init_std = 0.3;
    double step = 1e-5;
    double tolerance = 1e-5;
    double min_grad = 1e-8;  // entries with smaller |grad| are not compared
    Seed seed{0};
};

struct GradGroup {
    std::string name;
    double worst_rel = 0.0;
    std::size_t checked = 0;
    std::size_t failed = 0;
};

struct GradcheckResult {
    std::vector<GradGroup> groups;
    double worst_rel = 0.0;
    std::size_t checked = 0;
    std::size_t failed = 0;
    std::size_t skipped_boundary = 0;  // perturbation moved a residual across the clip boundary
    std::uint64_t digest = 0;
    bool passed() const { return failed == 0 && checked > 0; }
};

// Central differences of the extended-precision reference loss against backward().
GradcheckResult gradcheck(const GradcheckOptions& opts);

}  // namespace resattn
