#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mvpt/error.hpp"
#include "mvpt/image.hpp"
#include "mvpt/rng.hpp"

namespace mvpt {

enum class LabelScheme { binary, ternary };

inline std::size_t scheme_classes(LabelScheme s) { return s == LabelScheme::binary ? 2 : 3; }
inline std::string scheme_name(LabelScheme s) { return s == LabelScheme::binary ? "binary" : "ternary"; }
inline LabelScheme parse_scheme(const std::string& s) {
    if (s == "binary") return LabelScheme::binary;
    if (s == "ternary") return LabelScheme::ternary;
    throw ConfigError("unknown label scheme '" + s + "' (binary|ternary)");
}

struct StudyRecord {
    std::string subject_id;
    std::filesystem::path mlo_path, cc_path;
    int label = 0;
};

/// Generator latents of one subject: the class, the two cue digits and their rendered values.
struct SubjectLatent {
    std::string subject_id;
    int label = 0;
    int radius_bin = 0;       // view-A digit
    int orientation_bin = 0;  // view-B digit
    double blob_sigma = 0;    // pixels
    double bar_angle_deg = 0; // degrees, counter-clockwise from horizontal
    bool mlo_right = false, cc_right = false;
};

namespace synth {

// Cue digits per class. Ternary: class c is drawn as (c, c) or (c-1, c+1) mod 3, so one digit
// leaves two classes possible while the pair pins the class down.
inline std::pair<int, int> cue_digits(LabelScheme scheme, int label, bool variant) {
    if (scheme == LabelScheme::ternary) {
        if (!variant) return {label, label};
        return {(label + 2) % 3, (label + 1) % 3};
    }
    // binary: label = radius digit XOR orientation digit
    const int r = variant ? 1 : 0;
    return {r, r ^ label};
}

inline int class_from_digits(LabelScheme scheme, int radius_bin, int orientation_bin) {
    for (int c = 0; c < static_cast<int>(scheme_classes(scheme)); ++c)
        for (bool v : {false, true}) {
            auto [r, o] = cue_digits(scheme, c, v);
            if (r == radius_bin && o == orientation_bin) return c;
        }
    return -1;
}

inline constexpr double kSigmaCentres[3] = {2.5, 4.5, 6.5};
inline constexpr double kSigmaJitter = 0.4;
// Probability of the (c, c) drawing; one digit then names its own class with this probability.
inline constexpr double kPrimaryDraw = 0.65;
inline constexpr double kAngleJitter = 6.0;

// Binary uses the outer radius bins and the axis-aligned orientations.
inline int radius_level(LabelScheme s, int digit) { return s == LabelScheme::binary ? digit * 2 : digit; }

inline double orientation_angle(int digit, Rng& rng) {
    if (digit == 0) return 0.0;
    if (digit == 1) return 90.0;
    return rng.bernoulli(0.5) ? 45.0 : 135.0;
}

/// Nearest-bin decode of the rendered blob width.
inline int decode_radius(LabelScheme s, double sigma) {
    int best = 0;
    double bd = 1e9;
    for (int d = 0; d < static_cast<int>(scheme_classes(s) == 2 ? 2 : 3); ++d) {
        double dist = std::abs(sigma - kSigmaCentres[radius_level(s, d)]);
        if (dist < bd) {
            bd = dist;
            best = d;
        }
    }
    return best;
}

/// Nearest-bin decode of the bar angle (mod 180; 45 and 135 share a bin).
inline int decode_orientation(double angle_deg) {
    const double a = std::fmod(std::fmod(angle_deg, 180.0) + 180.0, 180.0);
    const double centres[4] = {0.0, 45.0, 90.0, 135.0};
    int best = 0;
    double bd = 1e9;
    for (int k = 0; k < 4; ++k) {
        double dist = std::abs(a - centres[k]);
        dist = std::min(dist, 180.0 - dist);
        if (dist < bd) {
            bd = dist;
            best = k;
        }
    }
    return best == 0 ? 0 : best == 2 ? 1 : 2;
}

struct Canvas {
    Image img;
    bool right;
    double edge_x(double offset) const { return right ? static_cast<double>(img.width) - 1 - offset : offset; }
};

inline Canvas render_tissue(std::size_t side, Rng& rng) {
    Canvas cv{Image(side, side), rng.bernoulli(0.5)};
    const double s = static_cast<double>(side) / 64.0;
    const double cy = (static_cast<double>(side) - 1) / 2 + rng.uniform(-2, 2) * s;
    const double ay = 28 * s, ax = 40 * s;
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            const double x = cv.right ? static_cast<double>(side - 1 - c) : static_cast<double>(c);
            const double q = std::sqrt((static_cast<double>(r) - cy) * (static_cast<double>(r) - cy) / (ay * ay) + x * x / (ax * ax));
            const double edge = std::clamp((1.0 - q) * 12.0, 0.0, 1.0);
            cv.img.at(r, c) = static_cast<float>(0.25 * edge);
        }
    return cv;
}

inline void add_blob(Image& img, double y, double x, double sigma, double amp) {
    const long rad = static_cast<long>(std::ceil(4 * sigma));
    for (long r = static_cast<long>(y) - rad; r <= static_cast<long>(y) + rad; ++r)
        for (long c = static_cast<long>(x) - rad; c <= static_cast<long>(x) + rad; ++c) {
            if (r < 0 || c < 0 || r >= static_cast<long>(img.height) || c >= static_cast<long>(img.width)) continue;
            const double d2 = (r - y) * (r - y) + (c - x) * (c - x);
            img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) += static_cast<float>(amp * std::exp(-d2 / (2 * sigma * sigma)));
        }
}

inline void add_bar(Image& img, double y, double x, double angle_deg, double length, double width_sigma, double amp) {
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double uy = -std::sin(th), ux = std::cos(th);  // image rows grow downward
    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            const double dy = static_cast<double>(r) - y, dx = static_cast<double>(c) - x;
            const double along = dy * uy + dx * ux;
            const double across = -dy * ux + dx * uy;
            const double over = std::max(0.0, std::abs(along) - length / 2);
            const double v = amp * std::exp(-(across * across + over * over) / (2 * width_sigma * width_sigma));
            img.at(r, c) += static_cast<float>(v);
        }
}

inline void finish(Canvas& cv, Rng& rng, std::size_t nuisance, double s) {
    for (std::size_t k = 0; k < nuisance; ++k) {
        const double y = rng.uniform(8, 56) * s;
        add_blob(cv.img, y, cv.edge_x(rng.uniform(4, 36) * s), 1.0 * s, 0.12);
    }
    for (auto& p : cv.img.pixels) p = std::clamp(p + static_cast<float>(0.02 * rng.normal()), 0.f, 1.f);
}

}  // namespace synth

/// Renders one subject: view A (MLO) carries the blob cue, view B (CC) the bar cue.
inline std::pair<Image, Image> render_subject(SubjectLatent& lat, LabelScheme scheme, std::size_t side, Rng& rng) {
    using namespace synth;
    const double s = static_cast<double>(side) / 64.0;
    const bool variant = !rng.bernoulli(synth::kPrimaryDraw);
    auto [rd, od] = cue_digits(scheme, lat.label, variant);
    lat.radius_bin = rd;
    lat.orientation_bin = od;
    lat.blob_sigma = kSigmaCentres[radius_level(scheme, rd)] + rng.uniform(-kSigmaJitter, kSigmaJitter);
    lat.bar_angle_deg = orientation_angle(od, rng) + rng.uniform(-kAngleJitter, kAngleJitter);

    Canvas a = render_tissue(side, rng);
    lat.mlo_right = a.right;
    add_blob(a.img, rng.uniform(20, 44) * s, a.edge_x(rng.uniform(12, 24) * s), lat.blob_sigma * s, 0.75);
    finish(a, rng, 2, s);
    Canvas b = render_tissue(side, rng);
    lat.cc_right = b.right;
    add_bar(b.img, rng.uniform(22, 42) * s, b.edge_x(rng.uniform(14, 22) * s), lat.bar_angle_deg, 36 * s, 2.0 * s, 0.75);
    finish(b, rng, 2, s);
    return {std::move(a.img), std::move(b.img)};
}

struct SynthResult {
    std::filesystem::path manifest;
    std::vector<StudyRecord> records;
    std::vector<SubjectLatent> latents;
};

inline std::vector<std::size_t> balanced_class_counts(std::size_t n, std::size_t classes) {
    std::vector<std::size_t> counts(classes, n / classes);
    for (std::size_t c = 0; c < n % classes; ++c) ++counts[c];
    return counts;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<StudyRecord>& recs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << "subject_id,mlo,cc,label\n";
    const auto base = path.parent_path();
    for (const auto& r : recs)
        f << r.subject_id << ',' << r.mlo_path.lexically_relative(base).generic_string() << ','
          << r.cc_path.lexically_relative(base).generic_string() << ',' << r.label << '\n';
    if (!f) throw IoError("failed writing " + path.string());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Reads `subject_id,mlo,cc,label`; image paths are resolved against the manifest directory.
inline std::vector<StudyRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != "subject_id,mlo,cc,label")
        throw DecodeError(path.string() + ": expected header subject_id,mlo,cc,label");
    std::vector<StudyRecord> out;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 4) throw DecodeError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
        StudyRecord r;
        r.subject_id = cells[0];
        r.mlo_path = path.parent_path() / cells[1];
        r.cc_path = path.parent_path() / cells[2];
        try {
            r.label = std::stoi(cells[3]);
        } catch (const std::exception&) {
            throw DecodeError(path.string() + ":" + std::to_string(lineno) + ": bad label '" + cells[3] + "'");
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::string subject_name(std::size_t i) {
    std::ostringstream os;
    os << 'S';
    os.width(5);
    os.fill('0');
    os << i;
    return os.str();
}

/// Latents and images in memory, no files written.
inline std::vector<std::pair<SubjectLatent, std::pair<Image, Image>>> synth_subjects(std::size_t n, LabelScheme scheme,
                                                                                    std::uint64_t seed, std::size_t side) {
    const std::size_t classes = scheme_classes(scheme);
    if (n < 10 * classes)
        throw ConfigError("synthetic set needs at least 10 subjects per class, got " + std::to_string(n) + " for " +
                          std::to_string(classes) + " classes");
    Rng rng(seed);
    std::vector<int> labels;
    auto counts = balanced_class_counts(n, classes);
    for (std::size_t c = 0; c < classes; ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
    rng.shuffle(labels.begin(), labels.end());
    std::vector<std::pair<SubjectLatent, std::pair<Image, Image>>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng sub = rng.fork(i);
        SubjectLatent lat;
        lat.subject_id = subject_name(i);
        lat.label = labels[i];
        auto views = render_subject(lat, scheme, side, sub);
        out.push_back({lat, std::move(views)});
    }
    return out;
}

/// Writes images (PGM), `manifest.csv` and `latents.csv` into `out_dir`.
inline SynthResult synth_generate(std::size_t n, LabelScheme scheme, std::uint64_t seed,
                                  const std::filesystem::path& out_dir, std::size_t side = 64) {
    auto subjects = synth_subjects(n, scheme, seed, side);
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec || !std::filesystem::is_directory(out_dir / "images"))
        throw IoError("cannot create output directory " + out_dir.string());
    SynthResult res;
    res.manifest = out_dir / "manifest.csv";
    for (auto& [lat, views] : subjects) {
        StudyRecord r;
        r.subject_id = lat.subject_id;
        r.mlo_path = out_dir / "images" / (lat.subject_id + "_mlo.pgm");
        r.cc_path = out_dir / "images" / (lat.subject_id + "_cc.pgm");
        r.label = lat.label;
        write_pgm(r.mlo_path, views.first);
        write_pgm(r.cc_path, views.second);
        res.records.push_back(std::move(r));
        res.latents.push_back(lat);
    }
    write_manifest(res.manifest, res.records);
    std::ofstream lf(out_dir / "latents.csv", std::ios::binary);
    if (!lf) throw IoError("cannot write " + (out_dir / "latents.csv").string());
    lf << "subject_id,label,radius_bin,orientation_bin,blob_sigma,bar_angle_deg,mlo_right,cc_right\n";
    lf.precision(17);
    for (const auto& l : res.latents)
        lf << l.subject_id << ',' << l.label << ',' << l.radius_bin << ',' << l.orientation_bin << ',' << l.blob_sigma
           << ',' << l.bar_angle_deg << ',' << l.mlo_right << ',' << l.cc_right << '\n';
    return res;
}

// ---------------------------------------------------------------------------
// loading

struct PairSample {
    std::string subject_id;
    Image mlo, cc;
    int label = 0;
};

inline PairSample load_pair(const StudyRecord& r, std::size_t height, std::size_t width) {
    return {r.subject_id, orient_normalize(load_image(r.mlo_path, height, width)),
            orient_normalize(load_image(r.cc_path, height, width)), r.label};
}

// ---------------------------------------------------------------------------
// stratified splitting

struct SplitPlan {
    std::vector<std::string> train, test;
    std::map<std::string, int> fold;  // train subjects only
    int folds = 5;

    std::vector<std::string> fold_members(int k) const {
        std::vector<std::string> out;
        for (const auto& id : train)
            if (fold.at(id) == k) out.push_back(id);
        return out;
    }
    bool operator==(const SplitPlan&) const = default;
};

/// Largest-remainder apportionment of `total` over weights `n_c`; ties go to the lower index.
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& n, std::size_t total) {
    std::size_t all = 0;
    for (auto v : n) all += v;
    std::vector<std::size_t> out(n.size());
    std::vector<std::pair<std::size_t, std::size_t>> rem;  // (remainder numerator, index)
    std::size_t used = 0;
    for (std::size_t c = 0; c < n.size(); ++c) {
        out[c] = n[c] * total / all;
        used += out[c];
        rem.push_back({n[c] * total % all, c});
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t k = 0; used < total; ++k, ++used) ++out[rem[k].second];
    return out;
}

/// 80/20 stratified train/test split, then stratified k folds over train. Depends only on
/// the set of (subject, label) pairs and the seed, not on manifest order.
inline SplitPlan split(const std::vector<StudyRecord>& records, std::uint64_t seed, int k = 5, double test_fraction = 0.2) {
    if (k < 2) throw SplitError("need at least 2 folds");
    std::map<int, std::vector<std::string>> by_class;
    std::map<std::string, int> seen;
    for (const auto& r : records) {
        if (!seen.emplace(r.subject_id, r.label).second) throw SplitError("subject " + r.subject_id + " listed twice");
        by_class[r.label].push_back(r.subject_id);
    }
    std::vector<std::size_t> sizes;
    for (auto& [c, ids] : by_class) {
        if (ids.size() < static_cast<std::size_t>(k))
            throw SplitError("class " + std::to_string(c) + " has " + std::to_string(ids.size()) + " subjects, fewer than " +
                             std::to_string(k) + " folds");
        std::sort(ids.begin(), ids.end());
        sizes.push_back(ids.size());
    }
    Rng rng(seed);
    for (auto& [c, ids] : by_class) rng.shuffle(ids.begin(), ids.end());
    const std::size_t n = records.size();
    const auto test_counts = apportion(sizes, static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n))));

    SplitPlan plan;
    plan.folds = k;
    std::size_t dealt = 0, ci = 0;
    for (auto& [c, ids] : by_class) {
        const std::size_t nt = test_counts[ci++];
        plan.test.insert(plan.test.end(), ids.begin(), ids.begin() + static_cast<long>(nt));
        for (std::size_t i = nt; i < ids.size(); ++i) {
            plan.train.push_back(ids[i]);
            plan.fold[ids[i]] = static_cast<int>(dealt++ % static_cast<std::size_t>(k));
        }
    }
    std::sort(plan.train.begin(), plan.train.end());
    std::sort(plan.test.begin(), plan.test.end());
    return plan;
}

inline void write_split(const std::filesystem::path& path, const SplitPlan& plan) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << "subject_id,split,fold\n";
    for (const auto& id : plan.train) f << id << ",train," << plan.fold.at(id) << '\n';
    for (const auto& id : plan.test) f << id << ",test,-1\n";
}

inline SplitPlan read_split(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open split " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != "subject_id,split,fold")
        throw DecodeError(path.string() + ": expected header subject_id,split,fold");
    SplitPlan plan;
    int maxfold = -1;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 3) throw DecodeError(path.string() + ": malformed row '" + line + "'");
        if (cells[1] == "train") {
            plan.train.push_back(cells[0]);
            int k = std::stoi(cells[2]);
            plan.fold[cells[0]] = k;
            maxfold = std::max(maxfold, k);
        } else if (cells[1] == "test") {
            plan.test.push_back(cells[0]);
        } else {
            throw DecodeError(path.string() + ": unknown split '" + cells[1] + "'");
        }
    }
    plan.folds = maxfold + 1;
    return plan;
}

}  // namespace mvpt
