#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/rng.hpp"
#include "tinyadapt/tensor.hpp"

namespace tinyadapt {

struct FiniteDiffOptions {
    /// Entries probed per parameter tensor; 0 probes every entry.
    std::size_t max_entries_per_param = 0;
    std::uint64_t seed = 0;
};

/// Compares the analytic gradient of `loss_fn` against central differences and
/// returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over
/// the probed entries. `loss_fn` must rebuild its graph from `params` on each
/// call.
template <class T, class LossFn>
double finite_diff_check(LossFn&& loss_fn, std::vector<TensorT<T>> params, double eps,
                         const FiniteDiffOptions& opts = {}) {
    if (!(eps >= 1e-5 && eps <= 1e-2)) throw ConfigError("finite_diff_check: eps must lie in [1e-5, 1e-2]");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    auto evaluate = [&]() -> double {
        const TensorT<T> loss = loss_fn();
        const double v = static_cast<double>(loss.item());
        if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
        return v;
    };
    {
        TensorT<T> loss = loss_fn();
        if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("finite_diff_check: loss is not finite");
        loss.backward();
    }
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.emplace_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                           : std::vector<T>(p.numel(), T(0)));
    }

    Rng rng(opts.seed);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<std::size_t> entries(p.numel());
        for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
        if (opts.max_entries_per_param != 0 && entries.size() > opts.max_entries_per_param) {
            rng.shuffle(entries);
            entries.resize(opts.max_entries_per_param);
        }
        for (const std::size_t i : entries) {
            auto buf = p.mutable_data();
            const T original = buf[i];
            buf[i] = static_cast<T>(static_cast<double>(original) + eps);
            const double up = evaluate();
            buf[i] = static_cast<T>(static_cast<double>(original) - eps);
            const double down = evaluate();
            buf[i] = original;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    for (auto& p : params) p.zero_grad();
    return worst;
}

}  // namespace tinyadapt
