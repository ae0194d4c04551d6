#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpt/data.hpp"
#include "mvpt/error.hpp"
#include "mvpt/multiview.hpp"
#include "mvpt/swin_config.hpp"

namespace mvpt {

/// Everything a command needs; every field has a JSON key of the same name.
struct RunConfig {
    BackboneConfig backbone;

    std::size_t prompt_length = 4;
    bool deep_prompts = true;
    bool view_specific_prompts = false;
    double tau = 4.0;
    double lambda = 0.1;

    double pretrain_lr = 1e-3;
    double pretrain_weight_decay = 0.05;
    std::size_t pretrain_epochs = 30;
    std::size_t pretrain_warmup_epochs = 5;
    std::size_t pretrain_batch = 24;

    double tune_lr = 0.01;
    double tune_momentum = 0.9;
    double tune_weight_decay = 0.01;
    std::size_t tune_epochs = 10;
    std::size_t tune_warmup_epochs = 1;
    std::size_t tune_batch = 2;

    double warmup_start_lr = 1e-6;
    bool augment = true;

    std::uint64_t seed = 0;
    std::string scheme = "ternary";
    std::size_t subjects = 600;
    std::size_t folds = 5;
    int fold = 0;  // held-out fold; -1 trains on every training subject
    std::string data_dir = "data";
    std::string out_dir = "run";

    double gradcheck_h = 1e-5;
    double gradcheck_tol = 1e-5;
    std::size_t gradcheck_coords = 6;
    std::string gradcheck_fault;

    LabelScheme label_scheme() const { return parse_scheme(scheme); }
    LossWeights loss_weights() const { return {tau, lambda}; }

    void validate() const {
        backbone.validate();
        const auto ls = label_scheme();
        if (backbone.num_classes != scheme_classes(ls))
            throw ConfigError("num_classes " + std::to_string(backbone.num_classes) + " does not match scheme '" + scheme +
                              "'");
        if (backbone.image_height != backbone.image_width) throw ConfigError("images must be square");
        if (!(tau > 0)) throw ConfigError("tau must be positive");
        if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
        if (!(pretrain_lr > 0) || !(tune_lr > 0) || !(warmup_start_lr >= 0)) throw ConfigError("learning rates must be positive");
        if (pretrain_weight_decay < 0 || tune_weight_decay < 0 || tune_momentum < 0 || tune_momentum >= 1)
            throw ConfigError("weight decay must be >= 0 and momentum in [0, 1)");
        if (pretrain_batch == 0 || tune_batch == 0) throw ConfigError("batch sizes must be positive");
        if (pretrain_warmup_epochs > pretrain_epochs || tune_warmup_epochs > tune_epochs)
            throw ConfigError("warm-up cannot exceed the epoch count");
        if (folds < 2) throw ConfigError("folds must be at least 2");
        if (fold < -1 || fold >= static_cast<int>(folds))
            throw ConfigError("fold " + std::to_string(fold) + " outside [-1, " + std::to_string(folds) + ")");
        if (!(gradcheck_h > 0) || !(gradcheck_tol > 0)) throw ConfigError("gradcheck_h and gradcheck_tol must be positive");
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    const auto& b = c.backbone;
    nlohmann::ordered_json j;
    j["image_height"] = b.image_height;
    j["image_width"] = b.image_width;
    j["channels"] = b.channels;
    j["patch_height"] = b.patch_height;
    j["patch_width"] = b.patch_width;
    j["embed_dim"] = b.embed_dim;
    j["depths"] = b.depths;
    j["heads"] = b.heads;
    j["window"] = b.window;
    j["num_classes"] = b.num_classes;
    j["mlp_ratio"] = b.mlp_ratio;
    j["relative_position_bias"] = b.relative_position_bias;
    j["prompt_length"] = c.prompt_length;
    j["deep_prompts"] = c.deep_prompts;
    j["view_specific_prompts"] = c.view_specific_prompts;
    j["tau"] = c.tau;
    j["lambda"] = c.lambda;
    j["pretrain_lr"] = c.pretrain_lr;
    j["pretrain_weight_decay"] = c.pretrain_weight_decay;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["pretrain_warmup_epochs"] = c.pretrain_warmup_epochs;
    j["pretrain_batch"] = c.pretrain_batch;
    j["tune_lr"] = c.tune_lr;
    j["tune_momentum"] = c.tune_momentum;
    j["tune_weight_decay"] = c.tune_weight_decay;
    j["tune_epochs"] = c.tune_epochs;
    j["tune_warmup_epochs"] = c.tune_warmup_epochs;
    j["tune_batch"] = c.tune_batch;
    j["warmup_start_lr"] = c.warmup_start_lr;
    j["augment"] = c.augment;
    j["seed"] = c.seed;
    j["scheme"] = c.scheme;
    j["subjects"] = c.subjects;
    j["folds"] = c.folds;
    j["fold"] = c.fold;
    j["data_dir"] = c.data_dir;
    j["out_dir"] = c.out_dir;
    j["gradcheck_h"] = c.gradcheck_h;
    j["gradcheck_tol"] = c.gradcheck_tol;
    j["gradcheck_coords"] = c.gradcheck_coords;
    j["gradcheck_fault"] = c.gradcheck_fault;
    return j;
}

namespace detail {
template <class V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        if constexpr (std::is_same_v<V, bool>) {
            if (!it->is_boolean()) throw ConfigError(std::string("config key '") + key + "' must be true or false");
        } else if constexpr (std::is_unsigned_v<V>) {
            if (!it->is_number_unsigned()) throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
        } else if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
            if (!it->is_number_integer()) throw ConfigError(std::string("config key '") + key + "' must be an integer");
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!it->is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
        }
        out = it->get<V>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}
}  // namespace detail

/// Parses a config object; keys not listed in `to_json` are rejected.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig c = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const auto known = to_json(RunConfig{});
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    auto& b = c.backbone;
    using detail::read_key;
    read_key(j, "image_height", b.image_height);
    read_key(j, "image_width", b.image_width);
    read_key(j, "channels", b.channels);
    read_key(j, "patch_height", b.patch_height);
    read_key(j, "patch_width", b.patch_width);
    read_key(j, "embed_dim", b.embed_dim);
    read_key(j, "depths", b.depths);
    read_key(j, "heads", b.heads);
    read_key(j, "window", b.window);
    read_key(j, "num_classes", b.num_classes);
    read_key(j, "mlp_ratio", b.mlp_ratio);
    read_key(j, "relative_position_bias", b.relative_position_bias);
    read_key(j, "prompt_length", c.prompt_length);
    read_key(j, "deep_prompts", c.deep_prompts);
    read_key(j, "view_specific_prompts", c.view_specific_prompts);
    read_key(j, "tau", c.tau);
    read_key(j, "lambda", c.lambda);
    read_key(j, "pretrain_lr", c.pretrain_lr);
    read_key(j, "pretrain_weight_decay", c.pretrain_weight_decay);
    read_key(j, "pretrain_epochs", c.pretrain_epochs);
    read_key(j, "pretrain_warmup_epochs", c.pretrain_warmup_epochs);
    read_key(j, "pretrain_batch", c.pretrain_batch);
    read_key(j, "tune_lr", c.tune_lr);
    read_key(j, "tune_momentum", c.tune_momentum);
    read_key(j, "tune_weight_decay", c.tune_weight_decay);
    read_key(j, "tune_epochs", c.tune_epochs);
    read_key(j, "tune_warmup_epochs", c.tune_warmup_epochs);
    read_key(j, "tune_batch", c.tune_batch);
    read_key(j, "warmup_start_lr", c.warmup_start_lr);
    read_key(j, "augment", c.augment);
    read_key(j, "seed", c.seed);
    read_key(j, "scheme", c.scheme);
    read_key(j, "subjects", c.subjects);
    read_key(j, "folds", c.folds);
    read_key(j, "fold", c.fold);
    read_key(j, "data_dir", c.data_dir);
    read_key(j, "out_dir", c.out_dir);
    read_key(j, "gradcheck_h", c.gradcheck_h);
    read_key(j, "gradcheck_tol", c.gradcheck_tol);
    read_key(j, "gradcheck_coords", c.gradcheck_coords);
    read_key(j, "gradcheck_fault", c.gradcheck_fault);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

/// Applies `key=value` overrides; values are read as JSON, falling back to a plain string.
inline RunConfig apply_overrides(RunConfig c, const std::vector<std::pair<std::string, std::string>>& kv) {
    const auto known = to_json(RunConfig{});
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : kv) {
        if (known.contains(k) && known[k].is_string()) {
            j[k] = v;
            continue;
        }
        auto parsed = nlohmann::json::parse(v, nullptr, false);
        j[k] = parsed.is_discarded() ? nlohmann::json(v) : parsed;
    }
    return config_from_json(j, std::move(c));
}

}  // namespace mvpt
