#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mvpt/error.hpp"
#include "mvpt/rng.hpp"
#include "mvpt/tensor.hpp"

namespace mvpt {

struct GradCheckOptions {
    double h = 1e-5;
    std::size_t max_coords = 0;  // per tensor; 0 checks every element
    std::uint64_t seed = 0;
    double floor = 1e-5;         // lower bound of the relative-error denominator
};

struct GradCheckReport {
    double max_rel_err = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0, worst_numeric = 0;
    std::size_t checked = 0;

    bool passed(double tol) const { return checked > 0 && max_rel_err < tol; }
};

inline double relative_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

using NamedParams = std::vector<std::pair<std::string, Tensor<double>>>;

/// Compares analytic gradients of the scalar `f` with central differences
/// (f(x+h) - f(x-h)) / 2h on (a sample of) the coordinates of `params`.
/// `f` must read the parameters through the given handles. When `numeric` is given it is
/// differenced instead of `f`; it must agree with `f` in value at the current point (a
/// loss with detached teachers held at their current values, for instance).
inline GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& f, const NamedParams& params,
                                         const GradCheckOptions& opt = {},
                                         const std::function<Tensor<double>()>& numeric = {}) {
    const auto& g = numeric ? numeric : f;
    if (!(opt.h > 0)) throw DomainError("finite_diff_check: step must be positive");
    for (const auto& [_, cp] : params) {
        auto p = cp;
        p.zero_grad();
    }
    {
        auto loss = f();
        if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: loss is not finite");
        backward(loss);
    }
    Rng rng(opt.seed);
    GradCheckReport rep;
    for (const auto& [name, cp] : params) {
        auto p = cp;
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        std::vector<std::size_t> coords;
        if (opt.max_coords == 0 || p.numel() <= opt.max_coords) {
            for (std::size_t i = 0; i < p.numel(); ++i) coords.push_back(i);
        } else {
            std::vector<std::size_t> all(p.numel());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            rng.shuffle(all.begin(), all.end());
            coords.assign(all.begin(), all.begin() + static_cast<long>(opt.max_coords));
        }
        for (auto i : coords) {
            const double x0 = p[i];
            double fp, fm;
            {
                NoGradGuard ng;
                p[i] = x0 + opt.h;
                fp = g().item();
                p[i] = x0 - opt.h;
                fm = g().item();
                p[i] = x0;
            }
            if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i]))
                throw NumericError("finite_diff_check: non-finite value at parameter '" + name + "' index " +
                                   std::to_string(i));
            const double numeric = (fp - fm) / (2 * opt.h);
            const double e = relative_error(analytic[i], numeric, opt.floor);
            ++rep.checked;
            if (e > rep.max_rel_err || rep.checked == 1) {
                rep.max_rel_err = e;
                rep.worst_param = name;
                rep.worst_index = i;
                rep.worst_analytic = analytic[i];
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace mvpt
