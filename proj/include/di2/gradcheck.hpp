// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "di2/ops.hpp"

namespace di2 {

// Max over every coordinate of every parameter of
//   |autodiff - central difference| / max(1, |central difference|).
// The loss closure is re-evaluated with parameters perturbed in place; the
// denominator uses the perturbation actually representable in T.
//
// A central difference is meaningless when the probe pair changes which side
// of a relu kink some activation sits on. Such coordinates are excluded and
// counted in `*straddled` when it is non-null; when it is null they are
// compared like any other.
template <class T>
double grad_check_params(const std::function<BasicTensor<T>()>& loss,
                         std::vector<BasicTensor<T>> params, double eps, std::size_t* straddled = nullptr) {
    if (!(eps >= 1e-5 && eps <= 1e-2)) throw ContractError("grad_check: eps must lie in [1e-5, 1e-2]");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    std::uint64_t base_signature = 0;
    BasicTensor<T> y;
    {
        ops::KinkTrace trace;
        y = loss();
        base_signature = trace.signature;
    }
    if (y.numel() != 1) throw ContractError("grad_check: function must be scalar-valued");
    backward(y);
    if (straddled != nullptr) *straddled = 0;

    // Loss value plus whether the kink pattern matched the unperturbed one.
    auto probe = [&]() {
        ops::KinkTrace trace;
        const double v = loss().item();
        return std::pair{v, trace.signature == base_signature};
    };

    double worst = 0.0;
    NoGradGuard no_grad;
    for (auto& p : params) {
        std::vector<T> analytic(p.numel(), T(0));
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        auto values = p.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T original = values[i];
            const T hi = static_cast<T>(original + eps);
            const T lo = static_cast<T>(original - eps);
            values[i] = hi;
            const auto [f_hi, same_hi] = probe();
            values[i] = lo;
            const auto [f_lo, same_lo] = probe();
            values[i] = original;
            if (straddled != nullptr && !(same_hi && same_lo)) {
                ++*straddled;
                continue;
            }
            const double fd = (f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo));
            const double err = std::abs(static_cast<double>(analytic[i]) - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

template <class T>
double grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f, BasicTensor<T> x,
                  double eps) {
    return grad_check_params<T>([&] { return f(x); }, {x}, eps);
}

}  // namespace di2
