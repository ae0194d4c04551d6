#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpt/checkpoint.hpp"
#include "mvpt/config.hpp"
#include "mvpt/data.hpp"
#include "mvpt/metrics.hpp"
#include "mvpt/train.hpp"

namespace mvpt {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// stream tags for derive_seed
enum SeedStream : std::uint64_t {
    kSeedBackbone = 1,
    kSeedPretrainOrder,
    kSeedPretrainAugment,
    kSeedPrompts,
    kSeedTuneOrder,
    kSeedTuneAugment,
    kSeedGradcheck,
};

inline void write_json(const fs::path& path, const ojson& j) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + path.string());
}

inline fs::path ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
    return dir;
}

// ---------------------------------------------------------------------------
// data

struct Dataset {
    SplitPlan plan;
    std::vector<PairSample> train;  // training subjects minus the held-out fold
    std::vector<PairSample> test;
};

/// Loads `manifest.csv` and `split.csv` from the data directory; the split is recomputed
/// from the seed when the file is missing.
inline Dataset load_dataset(const RunConfig& c) {
    const fs::path dir(c.data_dir);
    const auto records = read_manifest(dir / "manifest.csv");
    const auto classes = static_cast<int>(c.backbone.num_classes);
    for (const auto& r : records)
        if (r.label < 0 || r.label >= classes)
            throw DecodeError("subject " + r.subject_id + " has label " + std::to_string(r.label) + " outside [0, " +
                              std::to_string(classes) + ")");
    Dataset ds;
    ds.plan = fs::exists(dir / "split.csv") ? read_split(dir / "split.csv")
                                            : split(records, c.seed, static_cast<int>(c.folds));
    if (ds.plan.folds != static_cast<int>(c.folds))
        throw ConfigError("split has " + std::to_string(ds.plan.folds) + " folds, config asks for " +
                          std::to_string(c.folds));
    std::map<std::string, const StudyRecord*> by_id;
    for (const auto& r : records) by_id[r.subject_id] = &r;
    auto load = [&](const std::string& id) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw SplitError("split lists unknown subject " + id);
        return load_pair(*it->second, c.backbone.image_height, c.backbone.image_width);
    };
    for (const auto& id : ds.plan.train)
        if (c.fold < 0 || ds.plan.fold.at(id) != c.fold) ds.train.push_back(load(id));
    for (const auto& id : ds.plan.test) ds.test.push_back(load(id));
    return ds;
}

inline SynthResult cmd_synth(const RunConfig& c, std::ostream& out) {
    c.validate();
    auto res = synth_generate(c.subjects, c.label_scheme(), c.seed, c.data_dir, c.backbone.image_height);
    const auto plan = split(res.records, c.seed, static_cast<int>(c.folds));
    write_split(fs::path(c.data_dir) / "split.csv", plan);
    std::vector<std::size_t> hist(c.backbone.num_classes, 0);
    for (const auto& r : res.records) ++hist[static_cast<std::size_t>(r.label)];
    out << "manifest: " << res.manifest.string() << '\n';
    for (std::size_t k = 0; k < hist.size(); ++k) out << "class " << k << ": " << hist[k] << '\n';
    return res;
}

// ---------------------------------------------------------------------------
// stage 1

struct PretrainResult {
    ModelState<float> state;
    ojson log;
};

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

/// Supervised training of backbone and single-view head on single views (both views of
/// every training subject, each an independent sample).
inline PretrainResult pretrain(const RunConfig& c, const std::vector<PairSample>& train, std::ostream* progress = nullptr) {
    c.validate();
    if (train.empty()) throw ContractError("pretrain: no training subjects");
    PretrainResult res;
    res.state = init_backbone<float>(c.backbone, derive_seed(c.seed, kSeedBackbone, c.fold));
    std::vector<ViewSample> views;
    for (const auto& s : train) {
        views.push_back({&s.mlo, s.label});
        views.push_back({&s.cc, s.label});
    }
    const std::size_t spe = steps_per_epoch(views.size(), c.pretrain_batch);
    const LrSchedule sched{c.pretrain_lr, c.pretrain_warmup_epochs * spe, c.pretrain_epochs * spe, c.warmup_start_lr};
    AdamW<float> opt;
    opt.weight_decay = c.pretrain_weight_decay;

    res.log["phase"] = "pretrain";
    res.log["fold"] = c.fold;
    res.log["samples"] = views.size();
    res.log["steps_per_epoch"] = spe;
    res.log["epochs"] = ojson::array();
    std::size_t step = 0;
    std::vector<std::size_t> order(views.size());
    std::vector<Image> aug(c.pretrain_batch);
    for (std::size_t e = 0; e < c.pretrain_epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        Rng(derive_seed(c.seed, kSeedPretrainOrder, c.fold, e)).shuffle(order.begin(), order.end());
        double loss_sum = 0;
        const double lr0 = sched.at(step);
        for (std::size_t b = 0; b < spe; ++b) {
            std::vector<ViewSample> batch;
            for (std::size_t i = b * c.pretrain_batch; i < std::min(views.size(), (b + 1) * c.pretrain_batch); ++i) {
                const auto& v = views[order[i]];
                if (c.augment) {
                    auto& slot = aug[batch.size()];
                    slot = augment(*v.image, derive_seed(c.seed, kSeedPretrainAugment, c.fold, e, order[i]));
                    batch.push_back({&slot, v.label});
                } else {
                    batch.push_back(v);
                }
            }
            loss_sum += pretrain_step(std::span<const ViewSample>(batch), c.backbone, res.state, opt, sched.at(step));
            ++step;
        }
        const double loss = loss_sum / static_cast<double>(spe);
        res.log["epochs"].push_back({{"epoch", e}, {"loss", loss}, {"lr", lr0}});
        if (progress) *progress << "pretrain epoch " << e + 1 << '/' << c.pretrain_epochs << " loss " << loss << '\n';
    }
    return res;
}

struct StageOutputs {
    fs::path checkpoint, log, report;
};

inline StageOutputs cmd_pretrain(const RunConfig& c, std::ostream* progress = nullptr) {
    c.validate();
    const auto ds = load_dataset(c);
    auto res = pretrain(c, ds.train, progress);
    const auto dir = ensure_dir(c.out_dir);
    StageOutputs out{dir / "stage1.ckpt", dir / "pretrain_log.json", {}};
    const auto mask = build_freeze_mask(res.state, Phase::pretrain);
    save_checkpoint(out.checkpoint, res.state, &mask);
    write_json(out.log, res.log);
    return out;
}

// ---------------------------------------------------------------------------
// stage 2

inline TuneInit tune_init(const RunConfig& c) {
    return {c.prompt_length, c.deep_prompts, c.view_specific_prompts, derive_seed(c.seed, kSeedPrompts, c.fold)};
}

struct TuneResult {
    ModelState<float> state;
    FreezeMask mask;
    ojson log;
    ojson trainable;
};

inline bool backbone_has_grad(const ModelState<float>& state) {
    for (const auto& [n, t] : state)
        if (starts_with(n, "backbone.") && (t.has_grad() || t.requires_grad())) return true;
    return false;
}

/// Prompt tuning on paired views with the backbone frozen. `max_steps` > 0 stops early.
inline TuneResult tune(const RunConfig& c, const ModelState<float>& stage1, const std::vector<PairSample>& train,
                       std::ostream* progress = nullptr, std::size_t max_steps = 0) {
    c.validate();
    if (train.empty()) throw ContractError("tune: no training subjects");
    TuneResult res;
    res.state = init_tuning_state(stage1, c.backbone, tune_init(c));
    res.mask = build_freeze_mask(res.state, Phase::tune);
    apply_freeze_mask(res.state, res.mask);
    const auto hash_before = state_hash(stage1);

    const std::size_t spe = steps_per_epoch(train.size(), c.tune_batch);
    const LrSchedule sched{c.tune_lr, c.tune_warmup_epochs * spe, c.tune_epochs * spe, c.warmup_start_lr};
    Sgd<float> opt;
    opt.momentum = c.tune_momentum;
    opt.weight_decay = c.tune_weight_decay;
    const auto w = c.loss_weights();

    res.log["phase"] = "tune";
    res.log["fold"] = c.fold;
    res.log["pairs"] = train.size();
    res.log["steps_per_epoch"] = spe;
    res.log["tau"] = w.tau;
    res.log["lambda"] = w.lambda;
    res.log["epochs"] = ojson::array();
    std::size_t step = 0;
    bool grad_free = true, done = false;
    std::vector<std::size_t> order(train.size());
    std::vector<PairSample> aug(c.tune_batch);
    for (std::size_t e = 0; e < c.tune_epochs && !done; ++e) {
        std::iota(order.begin(), order.end(), 0);
        Rng(derive_seed(c.seed, kSeedTuneOrder, c.fold, e)).shuffle(order.begin(), order.end());
        StepLosses sum;
        std::size_t steps = 0, saturated = 0;
        const double lr0 = sched.at(step);
        for (std::size_t b = 0; b < spe; ++b) {
            if (max_steps && step >= max_steps) {
                done = true;
                break;
            }
            std::vector<const PairSample*> batch;
            for (std::size_t i = b * c.tune_batch; i < std::min(train.size(), (b + 1) * c.tune_batch); ++i) {
                const auto& s = train[order[i]];
                if (c.augment) {
                    auto& slot = aug[batch.size()];
                    slot.subject_id = s.subject_id;
                    slot.label = s.label;
                    slot.mlo = augment(s.mlo, derive_seed(c.seed, kSeedTuneAugment, c.fold, e, order[i], 0));
                    slot.cc = augment(s.cc, derive_seed(c.seed, kSeedTuneAugment, c.fold, e, order[i], 1));
                    batch.push_back(&slot);
                } else {
                    batch.push_back(&s);
                }
            }
            const auto l = tune_step(std::span<const PairSample* const>(batch), c.backbone, res.state, opt, sched.at(step), w);
            grad_free = grad_free && !backbone_has_grad(res.state);
            sum.l_mlo += l.l_mlo;
            sum.l_cc += l.l_cc;
            sum.l_mv += l.l_mv;
            sum.l_md += l.l_md;
            sum.l_overall += l.l_overall;
            saturated += l.saturated;
            ++steps;
            ++step;
        }
        if (steps == 0) break;
        const double k = static_cast<double>(steps);
        res.log["epochs"].push_back({{"epoch", e},
                                     {"steps", steps},
                                     {"lr", lr0},
                                     {"l_overall", sum.l_overall / k},
                                     {"l_mv", sum.l_mv / k},
                                     {"l_mlo", sum.l_mlo / k},
                                     {"l_cc", sum.l_cc / k},
                                     {"l_md", sum.l_md / k},
                                     {"saturated_steps", saturated}});
        if (progress)
            *progress << "tune epoch " << e + 1 << '/' << c.tune_epochs << " loss " << sum.l_overall / k << '\n';
    }
    res.log["total_steps"] = step;
    res.state.zero_grad();

    const auto hash_after = state_hash(res.state);
    auto& t = res.trainable;
    t["learnable"] = ojson::array();
    std::size_t learn = 0;
    for (const auto& [n, l] : res.mask)
        if (l) {
            const auto k = res.state.at(n).numel();
            t["learnable"].push_back({{"name", n}, {"elements", k}});
            learn += k;
        }
    t["learnable_elements"] = learn;
    t["total_elements"] = res.state.parameter_count();
    t["fraction"] = trainable_fraction(res.state, res.mask);
    t["backbone_hash_before"] = hash_before;
    t["backbone_hash_after"] = hash_after;
    t["backbone_unchanged"] = hash_before == hash_after;
    t["backbone_grad_free"] = grad_free;
    if (hash_before != hash_after) throw AuditError("backbone changed during tuning");
    if (!grad_free) throw AuditError("a backbone tensor received a gradient during tuning");
    return res;
}

inline StageOutputs cmd_tune(const RunConfig& c, const fs::path& stage1_path, std::ostream* progress = nullptr) {
    c.validate();
    const auto stage1 = load_checkpoint<float>(stage1_path, c.backbone);
    const auto ds = load_dataset(c);
    auto res = tune(c, stage1.state, ds.train, progress);
    const auto dir = ensure_dir(c.out_dir);
    StageOutputs out{dir / "stage2.ckpt", dir / "tune_log.json", dir / "trainable.json"};
    save_checkpoint(out.checkpoint, res.state, &res.mask);
    write_json(out.log, res.log);
    write_json(out.report, res.trainable);
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

inline std::vector<double> softmax_probs(const Tensor<float>& logits) {
    std::vector<double> p(logits.numel());
    double mx = -INFINITY;
    for (std::size_t i = 0; i < p.size(); ++i) mx = std::max(mx, static_cast<double>(logits[i]));
    double z = 0;
    for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    for (auto& v : p) v /= z;
    return p;
}

/// Row-major class probabilities of every route for one checkpoint.
struct Predictions {
    std::vector<double> mlo, cc, fused, multi;
    std::vector<int> labels;
    bool prompted = false;
};

inline bool is_prompted_state(const ModelState<float>& s) { return s.contains("head.multi.weight"); }

/// A stage-1 state is scored by the plain backbone with score-level fusion; a stage-2
/// state by the prompted single-view routes and the joint-token multi-view route.
inline Predictions predict(const ModelState<float>& state, const BackboneConfig& cfg, const std::vector<PairSample>& data) {
    NoGradGuard ng;
    Predictions p;
    p.prompted = is_prompted_state(state);
    Adapter<float> ad;
    if (p.prompted) ad = adapter_from_state(state, cfg);
    for (const auto& s : data) {
        std::vector<double> a, b, m;
        if (p.prompted) {
            a = softmax_probs(forward_singleview(s.mlo, TokenTag::mlo_patch, cfg, state, ad));
            b = softmax_probs(forward_singleview(s.cc, TokenTag::cc_patch, cfg, state, ad));
            m = softmax_probs(forward_multiview(s.mlo, s.cc, cfg, state, ad));
        } else {
            a = softmax_probs(forward_backbone(s.mlo, cfg, state).logits);
            b = softmax_probs(forward_backbone<float>(s.cc, cfg, state, nullptr, "head.single", TokenTag::cc_patch).logits);
        }
        std::vector<double> f(a.size());
        for (std::size_t k = 0; k < f.size(); ++k) f[k] = 0.5 * (a[k] + b[k]);
        if (!p.prompted) m = f;
        p.mlo.insert(p.mlo.end(), a.begin(), a.end());
        p.cc.insert(p.cc.end(), b.begin(), b.end());
        p.fused.insert(p.fused.end(), f.begin(), f.end());
        p.multi.insert(p.multi.end(), m.begin(), m.end());
        p.labels.push_back(s.label);
    }
    return p;
}

struct RouteMetrics {
    Metrics mlo, cc, averaged, fused, multi;
};

inline RouteMetrics route_metrics(const Predictions& p, std::size_t classes) {
    RouteMetrics r;
    r.mlo = evaluate(p.mlo, p.labels, classes);
    r.cc = evaluate(p.cc, p.labels, classes);
    r.averaged = average(r.mlo, r.cc);
    r.fused = evaluate(p.fused, p.labels, classes);
    r.multi = evaluate(p.multi, p.labels, classes);
    return r;
}

/// Single-view metrics are the mean of the mlo and cc routes; several checkpoints (one per
/// fold) are aggregated to mean and sample standard deviation.
inline ojson eval_report(const std::vector<RouteMetrics>& runs, bool prompted) {
    if (runs.empty()) throw ContractError("eval_report: no runs");
    auto agg = [&](Metrics RouteMetrics::*m) {
        std::vector<Metrics> v;
        for (const auto& r : runs) v.push_back(r.*m);
        return v.size() == 1 ? single_report(v[0]) : aggregate_folds(v);
    };
    ojson j;
    j["mode"] = prompted ? "prompted" : "baseline";
    auto sv = to_json(agg(&RouteMetrics::averaged));
    sv["mlo"] = to_json(agg(&RouteMetrics::mlo));
    sv["cc"] = to_json(agg(&RouteMetrics::cc));
    sv["score_fused"] = to_json(agg(&RouteMetrics::fused));
    j["single_view"] = sv;
    ojson mv;
    mv["source"] = prompted ? "joint_tokens" : "score_fused";
    mv.update(to_json(agg(&RouteMetrics::multi)));
    j["multi_view"] = mv;
    return j;
}

inline ojson cmd_eval(const RunConfig& c, const std::vector<fs::path>& checkpoints) {
    c.validate();
    if (checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
    const auto ds = load_dataset(c);
    std::vector<RouteMetrics> runs;
    int prompted = -1;
    for (const auto& path : checkpoints) {
        const auto ck = load_checkpoint<float>(path, c.backbone);
        const auto p = predict(ck.state, c.backbone, ds.test);
        if (prompted >= 0 && prompted != static_cast<int>(p.prompted))
            throw ContractError("cannot aggregate stage-1 and stage-2 checkpoints: " + path.string());
        prompted = p.prompted;
        runs.push_back(route_metrics(p, c.backbone.num_classes));
    }
    auto j = eval_report(runs, prompted == 1);
    j["test_subjects"] = ds.test.size();
    j["checkpoints"] = ojson::array();
    for (const auto& p : checkpoints) j["checkpoints"].push_back(p.generic_string());
    return j;
}

// ---------------------------------------------------------------------------
// parameter audit

/// Swin-B at full resolution: embed 128, depths {2,2,18,2}, heads {4,8,16,32},
/// window 16, relative position bias, 1024x1024 input, prompt length 5.
inline RunConfig full_scale_config() {
    RunConfig c;
    auto& b = c.backbone;
    b.image_height = b.image_width = 1024;
    b.channels = 3;
    b.embed_dim = 128;
    b.depths = {2, 2, 18, 2};
    b.heads = {4, 8, 16, 32};
    b.window = 16;
    b.relative_position_bias = true;
    b.num_classes = 3;
    c.prompt_length = 5;
    return c;
}

/// Learnable and total element counts of the tuning phase in closed form.
inline std::pair<std::size_t, std::size_t> hand_count(const RunConfig& c) {
    const auto& b = c.backbone;
    std::size_t widths = 0;
    if (c.deep_prompts)
        for (std::size_t s = 0; s < b.stages(); ++s) widths += b.depths[s] * b.stage_width(s);
    else
        widths = b.embed_dim;
    const std::size_t prompts = c.prompt_length * widths * (c.view_specific_prompts ? 2 : 1);
    const std::size_t head = b.final_width() * b.num_classes + b.num_classes;
    const std::size_t learn = prompts + 2 * b.embed_dim + 2 * head;
    const std::size_t total = backbone_parameter_count(b) + prompts + 2 * b.embed_dim + head;
    return {learn, total};
}

inline ojson audit_one(const RunConfig& c) {
    const auto shapes = tuning_parameter_shapes(c.backbone, tune_init(c));
    std::vector<std::string> names;
    for (const auto& [n, _] : shapes) names.push_back(n);
    const auto mask = build_freeze_mask(names, Phase::tune);
    std::size_t learn = 0, total = 0;
    for (const auto& [n, s] : shapes) {
        total += numel_of(s);
        if (mask.at(n)) learn += numel_of(s);
    }
    const auto [hl, ht] = hand_count(c);
    ojson j;
    j["learnable_elements"] = learn;
    j["total_elements"] = total;
    j["fraction"] = trainable_fraction(shapes, mask);
    j["hand_learnable"] = hl;
    j["hand_total"] = ht;
    j["hand_fraction"] = static_cast<double>(hl) / static_cast<double>(ht);
    j["hand_count_matches"] = learn == hl && total == ht;
    return j;
}

inline constexpr double kAuditTargetLo = 0.05, kAuditTargetHi = 0.10;

inline ojson cmd_audit(const RunConfig& c) {
    c.validate();
    ojson j;
    j["config"] = audit_one(c);
    auto p = audit_one(full_scale_config());
    const double f = p["fraction"].get<double>();
    p["target_range"] = {kAuditTargetLo, kAuditTargetHi};
    p["within_target"] = f >= kAuditTargetLo && f <= kAuditTargetHi;
    j["full_scale"] = p;
    return j;
}

}  // namespace mvpt
