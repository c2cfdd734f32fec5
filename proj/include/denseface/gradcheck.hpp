#pragma once

// Finite-difference verification harness. Run at f64; f32 central
// differences are too noisy for tight tolerances.

#include <functional>

#include "denseface/tensor.hpp"

namespace df {

// max over elements of |analytic - central difference| / max(1, |analytic|)
inline double grad_check(const std::function<TensorD(const TensorD&)>& f, TensorD x,
                         double h = 1e-4) {
    x.set_requires_grad(true);
    x.zero_grad();
    std::vector<double> analytic;
    {
        Tape<double> tape;
        TensorD y = f(x);
        if (y.numel() != 1) throw ContractError("grad_check: f must return a scalar");
        if (tape.size() == 0) {
            // f does not touch the tape (e.g. identity on a leaf); the
            // gradient of sum over a 1-element tensor is 1.
            analytic.assign(static_cast<size_t>(x.numel()), y.data().get() == x.data().get() ? 1.0 : 0.0);
        } else {
            tape.backward(y);
            analytic = x.has_grad() ? x.grad() : std::vector<double>(static_cast<size_t>(x.numel()), 0.0);
        }
    }
    double worst = 0.0;
    NoGradGuard<double> ng;
    auto& xv = x.mutable_values();
    for (size_t i = 0; i < xv.size(); ++i) {
        const double orig = xv[i];
        xv[i] = orig + h;
        const double fp = f(x).item();
        xv[i] = orig - h;
        const double fm = f(x).item();
        xv[i] = orig;
        const double num = (fp - fm) / (2.0 * h);
        if (std::isnan(num) || std::isnan(analytic[i]))
            throw NumericError("grad_check encountered NaN");
        const double err = std::abs(analytic[i] - num) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace df
