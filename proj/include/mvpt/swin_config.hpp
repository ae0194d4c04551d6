#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mvpt/error.hpp"
#include "mvpt/tensor.hpp"

namespace mvpt {

/// Shape of the shifted-window backbone.
struct BackboneConfig {
    std::size_t image_height = 64;
    std::size_t image_width = 64;
    std::size_t channels = 1;
    std::size_t patch_height = 4;
    std::size_t patch_width = 4;
    std::size_t embed_dim = 32;
    std::vector<std::size_t> depths{2, 2};
    std::vector<std::size_t> heads{2, 4};
    std::size_t window = 4;
    std::size_t num_classes = 3;
    std::size_t mlp_ratio = 4;
    bool relative_position_bias = false;

    std::size_t stages() const { return depths.size(); }
    std::size_t stage_width(std::size_t s) const { return embed_dim << s; }
    std::size_t grid_rows(std::size_t s) const { return (image_height / patch_height) >> s; }
    std::size_t grid_cols(std::size_t s) const { return (image_width / patch_width) >> s; }
    std::size_t final_width() const { return stage_width(stages() - 1); }

    std::size_t num_layers() const {
        std::size_t n = 0;
        for (auto d : depths) n += d;
        return n;
    }
    std::size_t layer_stage(std::size_t layer) const {
        for (std::size_t s = 0; s < depths.size(); ++s) {
            if (layer < depths[s]) return s;
            layer -= depths[s];
        }
        throw ConfigError("layer index " + std::to_string(layer) + " beyond the last stage");
    }
    std::size_t layer_width(std::size_t layer) const { return stage_width(layer_stage(layer)); }

    void validate() const {
        if (patch_height == 0 || patch_width == 0 || image_height % patch_height || image_width % patch_width)
            throw ConfigError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                              " is not divisible by patch " + std::to_string(patch_height) + "x" +
                              std::to_string(patch_width));
        if (depths.empty() || depths.size() != heads.size())
            throw ConfigError("depths and heads must list the same, non-zero number of stages");
        if (channels == 0 || embed_dim == 0 || window == 0 || num_classes < 2 || mlp_ratio == 0)
            throw ConfigError("channels, embed_dim, window and mlp_ratio must be positive and num_classes >= 2");
        for (std::size_t s = 0; s < stages(); ++s) {
            if (depths[s] == 0) throw ConfigError("stage " + std::to_string(s) + " has depth 0");
            if (heads[s] == 0 || stage_width(s) % heads[s])
                throw ConfigError("stage " + std::to_string(s) + " width " + std::to_string(stage_width(s)) +
                                  " not divisible by " + std::to_string(heads[s]) + " heads");
            if (grid_rows(s) == 0 || grid_cols(s) == 0)
                throw ConfigError("stage " + std::to_string(s) + " has an empty token grid");
            if (s + 1 < stages() && (grid_rows(s) % 2 || grid_cols(s) % 2))
                throw ConfigError("patch merging after stage " + std::to_string(s) + " needs an even grid, got " +
                                  std::to_string(grid_rows(s)) + "x" + std::to_string(grid_cols(s)));
        }
    }

    bool operator==(const BackboneConfig&) const = default;
};

inline std::string block_prefix(std::size_t stage, std::size_t block) {
    return "backbone.stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}
inline std::string merge_prefix(std::size_t stage) { return "backbone.stages." + std::to_string(stage) + ".merge."; }

using ShapeList = std::vector<std::pair<std::string, Shape>>;

/// Every backbone tensor plus the single-view head, in construction order.
inline ShapeList backbone_parameter_shapes(const BackboneConfig& cfg) {
    cfg.validate();
    ShapeList out;
    const std::size_t d0 = cfg.embed_dim;
    const std::size_t patch_in = cfg.patch_height * cfg.patch_width * cfg.channels;
    out.push_back({"backbone.patch_embed.weight", {patch_in, d0}});
    out.push_back({"backbone.patch_embed.bias", {d0}});
    out.push_back({"backbone.patch_embed.norm.weight", {d0}});
    out.push_back({"backbone.patch_embed.norm.bias", {d0}});
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        const std::size_t d = cfg.stage_width(s), hidden = d * cfg.mlp_ratio;
        for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
            const auto p = block_prefix(s, b);
            out.push_back({p + "norm1.weight", {d}});
            out.push_back({p + "norm1.bias", {d}});
            out.push_back({p + "attn.qkv.weight", {d, 3 * d}});
            out.push_back({p + "attn.qkv.bias", {3 * d}});
            out.push_back({p + "attn.proj.weight", {d, d}});
            out.push_back({p + "attn.proj.bias", {d}});
            if (cfg.relative_position_bias)
                out.push_back({p + "attn.rel_bias", {(2 * cfg.window - 1) * (2 * cfg.window - 1), cfg.heads[s]}});
            out.push_back({p + "norm2.weight", {d}});
            out.push_back({p + "norm2.bias", {d}});
            out.push_back({p + "mlp.fc1.weight", {d, hidden}});
            out.push_back({p + "mlp.fc1.bias", {hidden}});
            out.push_back({p + "mlp.fc2.weight", {hidden, d}});
            out.push_back({p + "mlp.fc2.bias", {d}});
        }
        if (s + 1 < cfg.stages()) {
            const auto p = merge_prefix(s);
            out.push_back({p + "norm.weight", {4 * d}});
            out.push_back({p + "norm.bias", {4 * d}});
            out.push_back({p + "reduction.weight", {4 * d, 2 * d}});
        }
    }
    out.push_back({"backbone.norm.weight", {cfg.final_width()}});
    out.push_back({"backbone.norm.bias", {cfg.final_width()}});
    out.push_back({"head.single.weight", {cfg.final_width(), cfg.num_classes}});
    out.push_back({"head.single.bias", {cfg.num_classes}});
    return out;
}

/// Closed-form parameter count of backbone + single-view head.
inline std::size_t backbone_parameter_count(const BackboneConfig& cfg) {
    cfg.validate();
    const std::size_t r = cfg.mlp_ratio, w2 = (2 * cfg.window - 1) * (2 * cfg.window - 1);
    std::size_t n = cfg.patch_height * cfg.patch_width * cfg.channels * cfg.embed_dim + 3 * cfg.embed_dim;
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        const std::size_t d = cfg.stage_width(s);
        // norms 4d, qkv 3d^2+3d, proj d^2+d, mlp 2 r d^2 + r d + d
        std::size_t block = 4 * d + 4 * d * d + 4 * d + 2 * r * d * d + r * d + d;
        if (cfg.relative_position_bias) block += w2 * cfg.heads[s];
        n += cfg.depths[s] * block;
        if (s + 1 < cfg.stages()) n += 8 * d + 8 * d * d;
    }
    n += 2 * cfg.final_width() + cfg.final_width() * cfg.num_classes + cfg.num_classes;
    return n;
}

}  // namespace mvpt
