#include "resattn/chunkwise.hpp"

#include <cmath>
#include <stdexcept>

namespace resattn {

namespace {

struct ChunkInputs {
    Matrix q;
    Matrix k;
    Matrix v;
    std::vector<double> alpha;
    std::vector<double> beta;
    std::vector<double> gamma;
};

ChunkInputs gather(const VariantConfig& cfg, std::span<const StepInput> seq) {
    const std::size_t n = seq.size();
    ChunkInputs c{Matrix(n, cfg.d_k), Matrix(n, cfg.d_k), Matrix(n, cfg.d_v), {}, {}, {}};
    for (std::size_t t = 0; t < n; ++t) {
        const StepInput& in = seq[t];
        if (in.q.dim() != cfg.d_k || in.k.dim() != cfg.d_k || in.v.dim() != cfg.d_v) {
            throw std::invalid_argument("chunk scan: input " + std::to_string(t) + " has inconsistent dims");
        }
        for (double g : {in.alpha, in.beta, in.gamma}) {
            if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("chunk scan: gate outside [0, 1]");
        }
        std::copy(in.q.values().begin(), in.q.values().end(), c.q.row(t).begin());
        std::copy(in.k.values().begin(), in.k.values().end(), c.k.row(t).begin());
        std::copy(in.v.values().begin(), in.v.values().end(), c.v.row(t).begin());
        const EffectiveGates g = effective_gates(cfg, in);
        c.alpha.push_back(g.alpha);
        c.beta.push_back(g.beta);
        c.gamma.push_back(g.gamma);
    }
    return c;
}

void check_state(const VariantConfig& cfg, const DualState& init) {
    if (init.s.rows() != cfg.d_v || init.s.cols() != cfg.d_k || init.r.rows() != cfg.d_v ||
        init.r.cols() != cfg.d_k) {
        throw std::invalid_argument("chunk scan: initial state " + shape_string(init.s) + "/" +
                                    shape_string(init.r) + " does not match config");
    }
}

Vector row_vector(const Matrix& m, std::size_t r) {
    return Vector(std::vector<double>(m.row(r).begin(), m.row(r).end()));
}

}  // namespace

ChunkPlan ChunkPlan::make(std::size_t seq_len, std::size_t chunk_size) {
    if (chunk_size < 1) throw std::invalid_argument("chunk_size must be at least 1");
    ChunkPlan plan;
    plan.chunk_size = chunk_size;
    plan.num_chunks = (seq_len + chunk_size - 1) / chunk_size;
    plan.tail_len = seq_len % chunk_size;
    return plan;
}

std::size_t ChunkPlan::chunk_length(std::size_t chunk) const {
    if (chunk + 1 == num_chunks && tail_len != 0) return tail_len;
    return chunk_size;
}

ChunkPass propagate_chunk(const Matrix& carried, const ChunkRecurrence& rec, std::span<const ChunkReadout> reads) {
    const std::size_t n = rec.keys.rows();
    if (rec.writes.rows() != n || rec.alphas.size() != n || rec.weights.size() != n) {
        throw std::invalid_argument("propagate_chunk: ragged chunk inputs");
    }
    if (carried.rows() != rec.writes.cols() || carried.cols() != rec.keys.cols()) {
        throw std::invalid_argument("propagate_chunk: carried state " + shape_string(carried) +
                                    " vs keys/writes " + shape_string(rec.keys) + "/" + shape_string(rec.writes));
    }

    // decay(t, i) = prod_{i < j <= t} a_j for i <= t; cum[t] = prod_{j <= t} a_j.
    Matrix decay(n, n);
    std::vector<double> cum(n);
    for (std::size_t t = 0; t < n; ++t) {
        decay(t, t) = 1.0;
        for (std::size_t i = t; i-- > 0;) decay(t, i) = decay(t, i + 1) * rec.alphas[i + 1];
        cum[t] = (t == 0 ? 1.0 : cum[t - 1]) * rec.alphas[t];
    }

    ChunkPass pass;
    for (const ChunkReadout& read : reads) {
        if (read.queries.rows() != n || read.queries.cols() != rec.keys.cols()) {
            throw std::invalid_argument("propagate_chunk: queries " + shape_string(read.queries));
        }
        Matrix scores = matmul_nt(read.queries, rec.keys);
        for (std::size_t t = 0; t < n; ++t) {
            auto row = scores.row(t);
            for (std::size_t i = 0; i < n; ++i) {
                if (read.inclusive && i <= t) {
                    row[i] *= decay(t, i) * rec.weights[i];
                } else if (!read.inclusive && i < t) {
                    row[i] *= decay(t - 1, i) * rec.weights[i];
                } else {
                    row[i] = 0.0;
                }
            }
        }
        Matrix y = matmul(scores, rec.writes);
        const Matrix from_carried = matmul_nt(read.queries, carried);
        for (std::size_t t = 0; t < n; ++t) {
            const double scale = read.inclusive ? cum[t] : (t == 0 ? 1.0 : cum[t - 1]);
            auto out = y.row(t);
            const auto c = from_carried.row(t);
            for (std::size_t j = 0; j < out.size(); ++j) out[j] += scale * c[j];
        }
        pass.readouts.push_back(std::move(y));
    }

    // M_n = cum[n-1] M_0 + sum_i decay(n-1, i) w_i u_i k_i^T
    if (n == 0) {
        pass.final_state = carried;
        return pass;
    }
    Matrix scaled_writes = rec.writes;
    for (std::size_t i = 0; i < n; ++i) {
        const double coef = decay(n - 1, i) * rec.weights[i];
        for (double& x : scaled_writes.row(i)) x *= coef;
    }
    Matrix final_state = matmul_tn(scaled_writes, rec.keys);
    const double total = cum[n - 1];
    auto out = final_state.values();
    const auto c = carried.values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = total * c[j] + out[j];
    pass.final_state = std::move(final_state);
    return pass;
}

ScanResult chunk_scan_sgla(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq,
                           std::size_t chunk_size) {
    if (cfg.kind != VariantKind::kSGLA && cfg.kind != VariantKind::kMamba2 && cfg.kind != VariantKind::kLinearAttn) {
        throw std::invalid_argument("chunk_scan_sgla: unsupported kind " + std::string(variant_name(cfg.kind)));
    }
    check_state(cfg, init);
    const ChunkPlan plan = ChunkPlan::make(seq.size(), chunk_size);

    ScanResult result{{}, init};
    result.outputs.reserve(seq.size());
    for (std::size_t c = 0; c < plan.num_chunks; ++c) {
        const auto chunk = seq.subspan(plan.chunk_begin(c), plan.chunk_length(c));
        const ChunkInputs in = gather(cfg, chunk);
        const ChunkReadout reads[] = {{in.q, false}};
        ChunkPass pass = propagate_chunk(result.final_state.s, {in.alpha, in.beta, in.k, in.v}, reads);

        for (std::size_t t = 0; t < chunk.size(); ++t) {
            StepOutput out;
            out.base = in.alpha[t] * row_vector(pass.readouts[0], t);
            const double h = in.beta[t] * dot(chunk[t].k, chunk[t].q);
            out.correction = Vector(cfg.d_v);
            for (std::size_t i = 0; i < cfg.d_v; ++i) out.correction[i] = h * chunk[t].v[i];
            out.o = out.base + out.correction;
            result.outputs.push_back(std::move(out));
        }
        result.final_state.s = std::move(pass.final_state);
    }
    return result;
}

ScanResult chunk_scan_rla(const VariantConfig& cfg, const DualState& init, std::span<const StepInput> seq,
                          std::size_t chunk_size) {
    if (cfg.kind != VariantKind::kRLA) {
        throw std::invalid_argument("chunk_scan_rla: unsupported kind " + std::string(variant_name(cfg.kind)));
    }
    check_state(cfg, init);
    const ChunkPlan plan = ChunkPlan::make(seq.size(), chunk_size);

    ScanResult result{{}, init};
    result.outputs.reserve(seq.size());
    for (std::size_t c = 0; c < plan.num_chunks; ++c) {
        const auto chunk = seq.subspan(plan.chunk_begin(c), plan.chunk_length(c));
        const std::size_t n = chunk.size();
        const ChunkInputs in = gather(cfg, chunk);

        // Base state: S_{t-1} k_t for the residuals, S_{t-1} q_t for the output.
        const ChunkReadout s_reads[] = {{in.k, false}, {in.q, false}};
        ChunkPass s_pass = propagate_chunk(result.final_state.s, {in.alpha, in.beta, in.k, in.v}, s_reads);

        Matrix residuals = in.v;
        residuals -= s_pass.readouts[0];
        for (double& x : residuals.values()) {
            if (cfg.squash == ResidualSquash::kTanh) {
                x = std::tanh(x);
            } else if (cfg.clip_c) {
                x = clip(x, *cfg.clip_c);
            }
        }

        const ChunkReadout r_reads[] = {{in.q, true}};
        ChunkPass r_pass = propagate_chunk(result.final_state.r, {in.alpha, in.gamma, in.k, residuals}, r_reads);

        for (std::size_t t = 0; t < n; ++t) {
            const double base_scale = cfg.gated_output ? in.alpha[t] : 1.0;
            const double corr_scale = cfg.gated_output ? in.gamma[t] : 1.0;
            StepOutput out;
            out.base = base_scale * row_vector(s_pass.readouts[1], t);
            out.correction = corr_scale * row_vector(r_pass.readouts[0], t);
            out.o = out.base + out.correction;
            out.r = row_vector(residuals, t);
            result.outputs.push_back(std::move(out));
        }
        result.final_state.s = std::move(s_pass.final_state);
        result.final_state.r = std::move(r_pass.final_state);
    }
    return result;
}

std::string_view scan_impl_name(ScanImpl impl) {
    switch (impl) {
        case ScanImpl::kChunkwise:
            return "chunkwise";
        case ScanImpl::kRecurrent:
            return "recurrent";
        case ScanImpl::kQuadratic:
            return "quadratic";
    }
    throw std::invalid_argument("unknown scan impl");
}

Matrix quadratic_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    const std::size_t n = q.rows();
    if (k.rows() != n || v.rows() != n || q.cols() != k.cols()) {
        throw std::invalid_argument("quadratic_attention: q " + shape_string(q) + ", k " + shape_string(k) +
                                    ", v " + shape_string(v));
    }
    const std::size_t d = q.cols();
    const Matrix kt = transpose(k);
    Matrix out(n, v.cols());
    std::vector<double> scores(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t len = t + 1;
        std::fill(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(len), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            const double qj = q(t, j);
            const double* krow = kt.row(j).data();
            for (std::size_t i = 0; i < len; ++i) scores[i] += qj * krow[i];
        }
        double* o = out.row(t).data();
        for (std::size_t i = 0; i < len; ++i) {
            const double s = scores[i];
            const double* vrow = v.row(i).data();
            for (std::size_t j = 0; j < v.cols(); ++j) o[j] += s * vrow[j];
        }
    }
    return out;
}

}  // namespace resattn
