#include <doctest.h>

#include <stdexcept>

#include <cstdlib>

#include "resattn/run_config.hpp"

using namespace resattn;

TEST_CASE("config text parsing") {
    const auto m = parse_config_text("# comment\nvariant = rdn\n\n  steps=500  # trailing\nclip_c = none\n", "t");
    CHECK(m.size() == 3);
    CHECK(m.at("variant") == "rdn");
    CHECK(m.at("steps") == "500");
    CHECK_THROWS_AS(parse_config_text("a = 1\na = 2\n", "t"), UsageError);
    CHECK_THROWS_WITH_AS(parse_config_text("a 1\n", "file.cfg"), doctest::Contains("file.cfg"), UsageError);
}

TEST_CASE("settings are applied by name") {
    TrainSettings s = default_train_settings();
    apply_setting(s, "variant", "rla_nofit");
    apply_setting(s, "nofit_correction", "value");
    apply_setting(s, "clip_c", "none");
    apply_setting(s, "d_model", "48");
    apply_setting(s, "peak_lr", "0.002");
    apply_setting(s, "full_lm_loss", "true");
    apply_setting(s, "disable_correction", "1");
    CHECK(s.model.variant.kind == VariantKind::kRLANoFit);
    CHECK(s.model.variant.nofit_correction == StatelessCorrection::kValue);
    CHECK_FALSE(s.model.variant.clip_c.has_value());
    CHECK(s.model.d_model == 48);
    CHECK(s.hyper.peak_lr == 0.002);
    CHECK(s.task.full_lm_loss);
    CHECK(s.model.disable_correction);
    apply_setting(s, "clip_c", "2.5");
    CHECK(s.model.variant.clip_c == 2.5);
}

TEST_CASE("bad settings are usage errors") {
    TrainSettings s = default_train_settings();
    CHECK_THROWS_AS(apply_setting(s, "learning_rate", "1"), UsageError);
    CHECK_THROWS_AS(apply_setting(s, "variant", "transformer"), UsageError);
    CHECK_THROWS_AS(apply_setting(s, "steps", "many"), UsageError);
    CHECK_THROWS_AS(apply_setting(s, "steps", "-3"), UsageError);
    CHECK_THROWS_AS(apply_setting(s, "use_silu", "maybe"), UsageError);
    CHECK_THROWS_WITH_AS(load_config_file("/nonexistent/run.cfg"), doctest::Contains("/nonexistent/run.cfg"),
                         UsageError);
}

TEST_CASE("every listed key is accepted") {
    for (const auto& key : train_setting_keys()) CHECK(!key.empty());
    CHECK(train_setting_keys().size() >= 30);
}
