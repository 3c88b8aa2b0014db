#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "resattn/run_config.hpp"

namespace resattn {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw UsageError(key + ": expected a non-negative integer, got '" + value + "'");
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw UsageError(key + ": expected an unsigned integer, got '" + value + "'");
    }
    return out;
}

double to_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw UsageError(key + ": expected a number, got '" + value + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError(key + ": expected true or false, got '" + value + "'");
}

using Setter = std::function<void(TrainSettings&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto size_field = [](auto member) {
            return [member](TrainSettings& s, const std::string& k, const std::string& v) {
                std::invoke(member, s) = to_size(k, v);
            };
        };
        t["variant"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            const auto kind = parse_variant(v);
            if (!kind) throw UsageError(k + ": unknown variant '" + v + "'");
            s.model.variant.kind = *kind;
        };
        t["task"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            if (v != "mqar" && v != "niah" && v != "copy") {
                throw UsageError(k + ": unknown task '" + v + "' (expected mqar, niah or copy)");
            }
            s.task.task = v;
        };
        t["n_layers"] = size_field([](TrainSettings& s) -> std::size_t& { return s.model.n_layers; });
        t["d_model"] = size_field([](TrainSettings& s) -> std::size_t& { return s.model.d_model; });
        t["n_heads"] = size_field([](TrainSettings& s) -> std::size_t& { return s.model.n_heads; });
        t["head_dim"] = size_field([](TrainSettings& s) -> std::size_t& { return s.model.head_dim; });
        t["d_ff"] = size_field([](TrainSettings& s) -> std::size_t& { return s.model.d_ff; });
        t["init_std"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.init_std = to_double(k, v);
        };
        t["alpha_init_min"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.alpha_init_min = to_double(k, v);
        };
        t["alpha_init_max"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.alpha_init_max = to_double(k, v);
        };
        t["clip_c"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            if (v == "none") {
                s.model.variant.clip_c.reset();
            } else {
                s.model.variant.clip_c = to_double(k, v);
            }
        };
        t["use_l2_norm"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.variant.use_l2_norm = to_bool(k, v);
        };
        t["use_silu"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.variant.use_silu = to_bool(k, v);
        };
        t["tie_gamma_to_beta"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.variant.tie_gamma_to_beta = to_bool(k, v);
        };
        t["gated_output"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.variant.gated_output = to_bool(k, v);
        };
        t["squash"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            if (v == "clip") {
                s.model.variant.squash = ResidualSquash::kClip;
            } else if (v == "tanh") {
                s.model.variant.squash = ResidualSquash::kTanh;
            } else {
                throw UsageError(k + ": expected clip or tanh, got '" + v + "'");
            }
        };
        t["nofit_correction"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            if (v == "residual") {
                s.model.variant.nofit_correction = StatelessCorrection::kResidual;
            } else if (v == "value") {
                s.model.variant.nofit_correction = StatelessCorrection::kValue;
            } else {
                throw UsageError(k + ": expected residual or value, got '" + v + "'");
            }
        };
        t["disable_correction"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.model.disable_correction = to_bool(k, v);
        };
        t["vocab_kv"] = size_field([](TrainSettings& s) -> std::size_t& { return s.task.layout.vocab_kv; });
        t["n_filler"] = size_field([](TrainSettings& s) -> std::size_t& { return s.task.layout.n_filler; });
        t["n_pairs"] = size_field([](TrainSettings& s) -> std::size_t& { return s.task.n_pairs; });
        t["seq_len"] = size_field([](TrainSettings& s) -> std::size_t& { return s.task.seq_len; });
        t["batch"] = size_field([](TrainSettings& s) -> std::size_t& { return s.task.batch; });
        t["eval_batch"] = size_field([](TrainSettings& s) -> std::size_t& { return s.task.eval_batch; });
        t["full_lm_loss"] = [](TrainSettings& s, const std::string& k, const std::string& v) {
            s.task.full_lm_loss = to_bool(k, v);
        };
        auto double_field = [](auto member) {
            return [member](TrainSettings& s, const std::string& k, const std::string& v) {
                std::invoke(member, s) = to_double(k, v);
            };
        };
        t["peak_lr"] = double_field([](TrainSettings& s) -> double& { return s.hyper.peak_lr; });
        t["min_lr"] = double_field([](TrainSettings& s) -> double& { return s.hyper.min_lr; });
        t["weight_decay"] = double_field([](TrainSettings& s) -> double& { return s.hyper.weight_decay; });
        t["grad_clip"] = double_field([](TrainSettings& s) -> double& { return s.hyper.grad_clip; });
        t["beta1"] = double_field([](TrainSettings& s) -> double& { return s.hyper.beta1; });
        t["beta2"] = double_field([](TrainSettings& s) -> double& { return s.hyper.beta2; });
        t["eps"] = double_field([](TrainSettings& s) -> double& { return s.hyper.eps; });
        t["warmup_steps"] = size_field([](TrainSettings& s) -> std::size_t& { return s.hyper.warmup_steps; });
        t["steps"] = size_field([](TrainSettings& s) -> std::size_t& { return s.steps; });
        t["eval_every"] = size_field([](TrainSettings& s) -> std::size_t& { return s.eval_every; });
        t["seed"] = [](TrainSettings& s, const std::string& k, const std::string& v) { s.seed = Seed{to_u64(k, v)}; };
        return t;
    }();
    return table;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& source) {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(line_no);
        if (eq == std::string_view::npos) throw UsageError(where + ": expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty() || value.empty()) throw UsageError(where + ": empty key or value");
        if (!out.emplace(key, value).second) throw UsageError(where + ": duplicate key '" + key + "'");
    }
    return out;
}

std::map<std::string, std::string> load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str(), path.string());
}

Seed default_seed() {
    const char* env = std::getenv("RESATTN_SEED");
    if (env == nullptr || *env == '\0') return Seed{0};
    return Seed{to_u64("RESATTN_SEED", env)};
}

TrainSettings default_train_settings() {
    TrainSettings s;
    s.seed = default_seed();
    return s;
}

void apply_setting(TrainSettings& s, const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw UsageError("unknown config key '" + key + "'");
    it->second(s, key, value);
}

const std::vector<std::string>& train_setting_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, setter] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

}  // namespace resattn
