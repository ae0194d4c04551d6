#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "mvpt/pipeline.hpp"

using namespace mvpt;

namespace {

RunConfig tiny(const fs::path& root) {
    RunConfig c;
    c.backbone.image_height = c.backbone.image_width = 32;
    c.backbone.embed_dim = 8;
    c.backbone.depths = {1, 1};
    c.subjects = 30;
    c.pretrain_epochs = 1;
    c.pretrain_warmup_epochs = 0;
    c.tune_epochs = 1;
    c.tune_warmup_epochs = 0;
    c.data_dir = (root / "data").string();
    c.out_dir = (root / "run").string();
    return c;
}

fs::path fresh(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mvpt_test_" + name);
    fs::remove_all(p);
    return p;
}

int run_cli(const std::string& args) {
    const int rc = std::system((std::string(MVPT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Pipeline, EndToEndIsByteDeterministic) {
    std::string first[3];
    for (int rep = 0; rep < 2; ++rep) {
        const auto c = tiny(fresh("det" + std::to_string(rep)));
        std::ostringstream sink;
        cmd_synth(c, sink);
        const auto s1 = cmd_pretrain(c);
        const auto s2 = cmd_tune(c, s1.checkpoint);
        const std::string got[3] = {read_file_bytes(s1.checkpoint), read_file_bytes(s2.checkpoint),
                                    cmd_eval(c, {s2.checkpoint})["multi_view"].dump()};
        for (int k = 0; k < 3; ++k) {
            if (rep == 0)
                first[k] = got[k];
            else
                EXPECT_EQ(got[k], first[k]) << k;
        }
    }
}

TEST(Pipeline, TuneKeepsBackboneAndReportsFraction) {
    const auto c = tiny(fresh("tune"));
    std::ostringstream sink;
    cmd_synth(c, sink);
    const auto s1 = cmd_pretrain(c);
    const auto before = load_checkpoint<float>(s1.checkpoint, c.backbone);
    const auto s2 = cmd_tune(c, s1.checkpoint);
    const auto after = load_checkpoint<float>(s2.checkpoint, c.backbone);
    EXPECT_EQ(state_hash(after.state), state_hash(before.state));
    EXPECT_FALSE(after.mask.at("backbone.patch_embed.weight"));
    EXPECT_TRUE(after.mask.at("prompt.layer1"));
    const auto rep = nlohmann::json::parse(read_file_bytes(s2.report));
    const auto [learn, total] = hand_count(c);
    EXPECT_EQ(rep["learnable_elements"].get<std::size_t>(), learn);
    EXPECT_EQ(rep["total_elements"].get<std::size_t>(), total);
    EXPECT_TRUE(rep["backbone_unchanged"].get<bool>());
}

TEST(Pipeline, EvalReportShapeAndMixingGuard) {
    const auto c = tiny(fresh("eval"));
    std::ostringstream sink;
    cmd_synth(c, sink);
    const auto s1 = cmd_pretrain(c);
    const auto s2 = cmd_tune(c, s1.checkpoint);
    const auto base = cmd_eval(c, {s1.checkpoint});
    EXPECT_EQ(base["mode"], "baseline");
    EXPECT_EQ(base["multi_view"]["source"], "score_fused");
    const auto two = cmd_eval(c, {s2.checkpoint, s2.checkpoint});
    EXPECT_EQ(two["mode"], "prompted");
    EXPECT_EQ(two["multi_view"]["std"]["auroc"], 0.0);
    EXPECT_EQ(two["test_subjects"], 6);
    EXPECT_THROW(cmd_eval(c, {s1.checkpoint, s2.checkpoint}), ContractError);
    EXPECT_THROW(cmd_eval(c, {}), ConfigError);
}

TEST(Audit, HandCountMatchesShapesAtBothScales) {
    const auto a = cmd_audit(RunConfig{});
    EXPECT_TRUE(a["config"]["hand_count_matches"].get<bool>());
    EXPECT_TRUE(a["full_scale"]["hand_count_matches"].get<bool>());
    // prompts 5 * sum(depth_s * width_s) at widths 128..1024
    const auto p = full_scale_config();
    std::size_t prompts = 0;
    for (std::size_t s = 0; s < 4; ++s) prompts += p.backbone.depths[s] * (128u << s);
    EXPECT_EQ(prompts * 5, 60160u);
}

TEST(Cli, ExitCodes) {
    const auto root = fresh("cli");
    const std::string cfg = "--data_dir " + (root / "data").string() + " --out_dir " + (root / "run").string() +
                            " --subjects 30 --image_height 32 --image_width 32 --embed_dim 8 --depths [1,1]"
                            " --pretrain_epochs 1 --pretrain_warmup_epochs 0 --tune_epochs 1 --tune_warmup_epochs 0";
    EXPECT_EQ(run_cli("synth " + cfg), 0);
    EXPECT_EQ(run_cli("pretrain " + cfg), 0);
    EXPECT_EQ(run_cli("tune " + cfg), 0);
    EXPECT_EQ(run_cli("eval " + cfg + " --ckpt " + (root / "run" / "stage2.ckpt").string()), 0);
    EXPECT_EQ(run_cli("audit"), 0);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("synth --no_such_key 3"), 1);
    EXPECT_EQ(run_cli("synth --tau -1"), 1);
    EXPECT_EQ(run_cli("eval " + cfg + " --ckpt " + (root / "nope.ckpt").string()), 2);
    EXPECT_EQ(run_cli("gradcheck --gradcheck_fault not_an_op"), 1);
}

TEST(Cli, GradcheckCatchesInjectedFault) {
    EXPECT_EQ(run_cli("gradcheck --gradcheck_fault layer_norm --gradcheck_coords 2"), 2);
}
