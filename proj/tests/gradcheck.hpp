#pragma once

// Central finite-difference oracle used by the gradient tests. It only calls a
// scalar loss function, so it stays independent of the analytic backward code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mcl::gradcheck {

struct GradMismatch {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_error = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off in the
/// difference quotient (about 1e-16 * |L| / eps) from dominating for
/// gradients that are numerically zero.
inline double relative_error(double a, double n, double floor = 1e-6) {
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    return std::abs(a - n) / denom;
}

/// Compares analytic gradients with a Richardson-extrapolated central
/// difference, (4 D(eps/2) - D(eps)) / 3 with D(h) = (L(w+h) - L(w-h)) / 2h,
/// for every entry of every tensor and returns the worst relative mismatch.
inline GradMismatch check_gradients(const std::vector<std::string>& names, const std::vector<std::span<double>>& params,
                                    const std::vector<std::span<const double>>& analytic,
                                    const std::function<double()>& loss, double eps = 1e-3) {
    GradMismatch worst;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t k = 0; k < params[t].size(); ++k) {
            const double saved = params[t][k];
            auto central = [&](double h) {
                params[t][k] = saved + h;
                const double lp = loss();
                params[t][k] = saved - h;
                const double lm = loss();
                params[t][k] = saved;
                return (lp - lm) / (2 * h);
            };
            const double numeric = (4 * central(eps / 2) - central(eps)) / 3;
            const double a = analytic[t][k];
            const double rel = relative_error(a, numeric);
            if (rel > worst.rel_error) worst = {names[t], k, a, numeric, rel};
        }
    }
    return worst;
}

}  // namespace mcl::gradcheck
