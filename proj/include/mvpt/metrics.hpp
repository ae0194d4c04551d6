#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpt/error.hpp"

namespace mvpt {

/// Mann-Whitney AUROC: P(s+ > s-) + P(s+ = s-)/2 via midranks. Labels are 0/1.
inline double auroc_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw MetricError("auroc: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                          " labels");
    const std::size_t n = scores.size();
    std::size_t npos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw MetricError("auroc: binary labels must be 0 or 1");
        npos += static_cast<std::size_t>(l);
    }
    const std::size_t nneg = n - npos;
    if (npos == 0 || nneg == 0) throw MetricError("auroc undefined: only one class present");
    for (double s : scores)
        if (std::isnan(s)) throw MetricError("auroc: NaN score");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // twice the rank sum of positives, so midranks stay integral
    std::uint64_t rank2 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const std::uint64_t mid2 = i + 1 + j;  // 2 * ((i+1) + j) / 2
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) rank2 += mid2;
        i = j;
    }
    const double u2 = static_cast<double>(rank2) - static_cast<double>(npos) * static_cast<double>(npos + 1);
    return u2 / (2.0 * static_cast<double>(npos) * static_cast<double>(nneg));
}

/// Unweighted mean of one-vs-rest AUROCs; `probs` is row-major [n, classes].
inline double auroc_macro_ovr(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
    const std::size_t n = labels.size();
    if (probs.size() != n * classes)
        throw MetricError("auroc_macro_ovr: probability matrix is not [" + std::to_string(n) + "," +
                          std::to_string(classes) + "]");
    std::vector<double> col(n);
    std::vector<int> bin(n);
    double total = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        bool present = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
                throw MetricError("auroc_macro_ovr: label " + std::to_string(labels[i]) + " out of range");
            col[i] = probs[i * classes + c];
            bin[i] = labels[i] == static_cast<int>(c);
            present = present || bin[i];
        }
        if (!present) throw MetricError("auroc_macro_ovr undefined: class " + std::to_string(c) + " absent");
        total += auroc_binary(col, bin);
    }
    return total / static_cast<double>(classes);
}

struct Prf {
    double precision = 0, recall = 0, f1 = 0;
};

/// Macro precision/recall/F1 with 0/0 := 0; F1 is averaged per class.
inline Prf macro_prf(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
    if (preds.size() != labels.size()) throw MetricError("macro_prf: preds and labels differ in length");
    std::vector<double> tp(classes), fp(classes), fn(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i], l = labels[i];
        if (p < 0 || l < 0 || static_cast<std::size_t>(p) >= classes || static_cast<std::size_t>(l) >= classes)
            throw MetricError("macro_prf: class index out of range");
        if (p == l)
            tp[static_cast<std::size_t>(p)] += 1;
        else {
            fp[static_cast<std::size_t>(p)] += 1;
            fn[static_cast<std::size_t>(l)] += 1;
        }
    }
    auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
    Prf out;
    for (std::size_t c = 0; c < classes; ++c) {
        const double p = ratio(tp[c], tp[c] + fp[c]), r = ratio(tp[c], tp[c] + fn[c]);
        out.precision += p;
        out.recall += r;
        out.f1 += ratio(2 * p * r, p + r);
    }
    const double k = static_cast<double>(classes);
    out.precision /= k;
    out.recall /= k;
    out.f1 /= k;
    return out;
}

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
    if (preds.empty() || preds.size() != labels.size()) throw MetricError("accuracy: empty or mismatched input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

struct Metrics {
    double accuracy = 0, precision_macro = 0, recall_macro = 0, f1_macro = 0, auroc = 0;

    static constexpr std::size_t count = 5;
    static constexpr const char* keys[count] = {"accuracy", "precision_macro", "recall_macro", "f1_macro", "auroc"};
    static constexpr double Metrics::*members[count] = {&Metrics::accuracy, &Metrics::precision_macro,
                                                        &Metrics::recall_macro, &Metrics::f1_macro, &Metrics::auroc};
    double& operator[](std::size_t i) { return this->*members[i]; }
    double operator[](std::size_t i) const { return this->*members[i]; }
};

/// Metrics of one evaluation, plus the per-fold values and spread when aggregated.
struct EvalReport {
    Metrics mean;
    Metrics std;
    std::vector<Metrics> folds;
};

/// Accuracy, macro P/R/F1 and AUROC from class probabilities [n, classes]. Binary
/// AUROC uses the positive-class column; otherwise macro one-vs-rest.
inline Metrics evaluate(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
    const std::size_t n = labels.size();
    if (probs.size() != n * classes) throw MetricError("evaluate: probability matrix shape mismatch");
    std::vector<int> preds(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = probs.subspan(i * classes, classes);
        preds[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    Metrics m;
    m.accuracy = accuracy(preds, labels);
    const auto prf = macro_prf(preds, labels, classes);
    m.precision_macro = prf.precision;
    m.recall_macro = prf.recall;
    m.f1_macro = prf.f1;
    if (classes == 2) {
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = probs[i * 2 + 1];
        m.auroc = auroc_binary(s, labels);
    } else {
        m.auroc = auroc_macro_ovr(probs, labels, classes);
    }
    return m;
}

/// Mean and sample (n-1) standard deviation over folds.
inline EvalReport aggregate_folds(const std::vector<Metrics>& folds) {
    if (folds.size() < 2) throw ContractError("aggregate_folds needs at least 2 folds, got " + std::to_string(folds.size()));
    EvalReport r;
    r.folds = folds;
    const double n = static_cast<double>(folds.size());
    for (std::size_t k = 0; k < Metrics::count; ++k) {
        double s = 0, lo = folds[0][k], hi = folds[0][k];
        for (const auto& f : folds) {
            s += f[k];
            lo = std::min(lo, f[k]);
            hi = std::max(hi, f[k]);
        }
        const double mu = std::clamp(s / n, lo, hi);
        double ss = 0;
        for (const auto& f : folds) ss += (f[k] - mu) * (f[k] - mu);
        r.mean[k] = mu;
        r.std[k] = std::sqrt(ss / (n - 1));
    }
    return r;
}

/// Element-wise mean of two metric sets.
inline Metrics average(const Metrics& a, const Metrics& b) {
    Metrics m;
    for (std::size_t k = 0; k < Metrics::count; ++k) m[k] = 0.5 * (a[k] + b[k]);
    return m;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    for (std::size_t k = 0; k < Metrics::count; ++k) j[Metrics::keys[k]] = m[k];
    return j;
}

/// Means under the fixed metric keys, then "std" and "folds".
inline nlohmann::ordered_json to_json(const EvalReport& r) {
    auto j = to_json(r.mean);
    j["std"] = r.folds.empty() ? nlohmann::ordered_json(nullptr) : to_json(r.std);
    j["folds"] = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) j["folds"].push_back(to_json(f));
    return j;
}

inline EvalReport single_report(const Metrics& m) { return {m, Metrics{}, {}}; }

}  // namespace mvpt
