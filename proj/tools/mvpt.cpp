#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "mvpt/gradcheck_suite.hpp"
#include "mvpt/pipeline.hpp"

namespace {

constexpr int kOk = 0, kUsage = 1, kRuntime = 2;

/// `--key value` and `--key=value` pairs left over after CLI11 parsing.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& rest) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const auto& a = rest[i];
        if (a.rfind("--", 0) != 0 || a.size() == 2) throw mvpt::ConfigError("unexpected argument '" + a + "'");
        auto key = a.substr(2);
        if (auto eq = key.find('='); eq != std::string::npos) {
            kv.push_back({key.substr(0, eq), key.substr(eq + 1)});
            continue;
        }
        if (i + 1 >= rest.size()) throw mvpt::ConfigError("override --" + key + " has no value");
        kv.push_back({key, rest[++i]});
    }
    return kv;
}

void print_json(const mvpt::ojson& j, const std::string& out) {
    if (!out.empty()) mvpt::write_json(out, j);
    std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view prompt tuning on a shifted-window backbone"};
    app.require_subcommand(1);
    std::string config_path, out_path;
    std::vector<std::string> ckpts;

    auto add = [&](const char* name, const char* help) {
        auto* s = app.add_subcommand(name, help);
        s->allow_extras();
        s->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
        return s;
    };
    auto* synth = add("synth", "generate the synthetic dataset and split");
    auto* pre = add("pretrain", "stage 1: train backbone and single-view head");
    auto* tune = add("tune", "stage 2: prompt tuning with the backbone frozen");
    tune->add_option("--ckpt", ckpts, "stage-1 checkpoint (default <out_dir>/stage1.ckpt)")->expected(0, 1);
    auto* eval = add("eval", "evaluate checkpoints on the test split");
    eval->add_option("--ckpt", ckpts, "checkpoint; repeat to aggregate folds")->required();
    eval->add_option("--out", out_path, "also write the report here");
    auto* gc = add("gradcheck", "finite-difference check of every backward rule and loss term");
    gc->add_option("--out", out_path, "also write the report here");
    auto* audit = add("audit", "trainable-parameter audit");
    audit->add_option("--out", out_path, "also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    CLI::App* cmd = app.get_subcommands().front();
    mvpt::RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = mvpt::load_config(config_path);
        cfg = mvpt::apply_overrides(cfg, parse_overrides(cmd->remaining()));
        cfg.validate();
    } catch (const mvpt::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    }

    try {
        if (cmd == synth) {
            mvpt::cmd_synth(cfg, std::cout);
        } else if (cmd == pre) {
            auto o = mvpt::cmd_pretrain(cfg, &std::cerr);
            std::cout << "checkpoint: " << o.checkpoint.string() << "\nlog: " << o.log.string() << '\n';
        } else if (cmd == tune) {
            const auto stage1 = ckpts.empty() ? std::filesystem::path(cfg.out_dir) / "stage1.ckpt"
                                              : std::filesystem::path(ckpts.front());
            auto o = mvpt::cmd_tune(cfg, stage1, &std::cerr);
            std::cout << "checkpoint: " << o.checkpoint.string() << "\nlog: " << o.log.string()
                      << "\nreport: " << o.report.string() << '\n';
        } else if (cmd == eval) {
            print_json(mvpt::cmd_eval(cfg, {ckpts.begin(), ckpts.end()}), out_path);
        } else if (cmd == gc) {
            const auto s = mvpt::run_gradcheck(cfg);
            for (const auto& e : s.entries) {
                std::cout << (e.passed ? "PASS " : "FAIL ") << e.name << " max_rel_err=" << e.report.max_rel_err
                          << " coords=" << e.report.checked << '\n';
                if (!e.passed)
                    std::cerr << "gradcheck failed: " << e.name << " worst parameter '" << e.report.worst_param
                              << "' index " << e.report.worst_index << " relative error " << e.report.max_rel_err
                              << " (analytic " << e.report.worst_analytic << ", numeric " << e.report.worst_numeric
                              << ")\n";
            }
            if (!out_path.empty()) mvpt::write_json(out_path, s.to_json());
            return s.passed() ? kOk : kRuntime;
        } else if (cmd == audit) {
            print_json(mvpt::cmd_audit(cfg), out_path);
        }
    } catch (const mvpt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}
