#pragma once

// Plain-text run configuration: `key = value` lines, `#` comments.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resattn/network.hpp"
#include "resattn/optimizer.hpp"
#include "resattn/tasks.hpp"

namespace resattn {

// Bad names, values or files; the CLI maps it to exit code 2.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Keys in file order are not kept; duplicate keys are an error.
std::map<std::string, std::string> parse_config_text(std::string_view text, const std::string& source);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

struct TrainSettings {
    ModelConfig model;
    TaskConfig task;
    OptimizerHyper hyper;
    std::size_t steps = 3000;
    std::size_t eval_every = 100;
    Seed seed{0};
};

// RESATTN_SEED when set, else 0.
Seed default_seed();

TrainSettings default_train_settings();

// Throws UsageError for unknown keys or unparsable values.
void apply_setting(TrainSettings& s, const std::string& key, const std::string& value);

const std::vector<std::string>& train_setting_keys();

}  // namespace resattn
