#include <gtest/gtest.h>

#include "mvpt/config.hpp"

using namespace mvpt;

TEST(Config, JsonRoundTrip) {
    RunConfig c;
    c.tau = 2.5;
    c.deep_prompts = false;
    c.backbone.depths = {1, 3};
    c.backbone.heads = {1, 2};
    c.data_dir = "somewhere";
    const auto back = config_from_json(nlohmann::json::parse(to_json(c).dump()));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.backbone, c.backbone);
}

TEST(Config, UnknownKeysAndWrongTypesRejected) {
    EXPECT_THROW(config_from_json(nlohmann::json{{"lambada", 0.1}}), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"prompt_length", -1}}), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"deep_prompts", 1}}), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"tau", "x"}}), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, OverridesParseJsonScalars) {
    auto c = apply_overrides(RunConfig{}, {{"augment", "false"}, {"lambda", "0"}, {"fold", "-1"}, {"data_dir", "123"}});
    EXPECT_FALSE(c.augment);
    EXPECT_EQ(c.lambda, 0.0);
    EXPECT_EQ(c.fold, -1);
    EXPECT_EQ(c.data_dir, "123");
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, ValidateCatchesInconsistencies) {
    auto bad = [](auto mutate) {
        RunConfig c;
        mutate(c);
        return c;
    };
    EXPECT_THROW(bad([](RunConfig& c) { c.scheme = "binary"; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.tau = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.fold = 5; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.tune_momentum = 1.0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.backbone.heads = {3, 4}; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.backbone.image_height = 62; }).validate(), ConfigError);
    EXPECT_THROW(bad([](RunConfig& c) { c.pretrain_warmup_epochs = 40; }).validate(), ConfigError);
    EXPECT_THROW(parse_scheme("quaternary"), ConfigError);
}
