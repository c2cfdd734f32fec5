#pragma once

// Forward diffusion noising and DDIM reverse sampling. Schedules are f64
// and immutable after construction.

#include <cstdint>
#include <string>
#include <vector>

#include "denseface/error.hpp"
#include "denseface/rng.hpp"
#include "denseface/tensor.hpp"

namespace df {

enum class ScheduleKind { linear, cosine };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

struct NoiseSchedule {
    int T = 1000;
    ScheduleKind kind = ScheduleKind::cosine;
    std::vector<double> beta;       // length T
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product of alpha

    double abar(int t) const {
        if (t < 0 || t >= T) throw IndexError("timestep " + std::to_string(t) + " not in [0," + std::to_string(T) + ")");
        return alpha_bar[static_cast<size_t>(t)];
    }
};

// "Improved" schedule realized as the cosine schedule (offset s = 0.008);
// linear keeps the classic 1e-4..0.02 beta ramp.
NoiseSchedule make_schedule(ScheduleKind kind, int T = 1000);

struct SamplerPlan {
    int steps = 25;
    std::vector<int> timesteps;  // strictly decreasing; last entry is 0 when steps >= 2
    double eta = 0.0;
};

SamplerPlan plan_timesteps(int T, int steps, double eta = 0.0);

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
template <class S>
Tensor<S> add_noise(const Tensor<S>& x0, const Tensor<S>& eps, int t, const NoiseSchedule& sched) {
    detail::same_shape(x0, eps, "add_noise");
    const double ab = sched.abar(t);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    Tensor<S> out(x0.shape());
    const auto& xv = x0.values();
    const auto& ev = eps.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i)
        ov[i] = static_cast<S>(sa) * xv[i] + static_cast<S>(sb) * ev[i];
    return out;
}

// One DDIM update t -> t_prev; t_prev == -1 means "predict clean x0".
// x0_hat is clamped to [-1, 1]; rng is consulted only when eta > 0.
template <class S>
Tensor<S> ddim_step(const Tensor<S>& x_t, const Tensor<S>& eps_hat, int t, int t_prev, double eta,
                    const NoiseSchedule& sched, Rng* rng = nullptr) {
    detail::same_shape(x_t, eps_hat, "ddim_step");
    if (t_prev >= t) throw ContractError("ddim_step requires t > t_prev, got t=" + std::to_string(t) + " t_prev=" + std::to_string(t_prev));
    if (t_prev < -1) throw ContractError("ddim_step t_prev out of range");
    if (eta < 0.0 || eta > 1.0) throw ContractError("eta must be in [0,1]");
    const double ab_t = sched.abar(t);
    const double ab_p = (t_prev < 0) ? 1.0 : sched.abar(t_prev);
    const double sq_ab_t = std::sqrt(ab_t), sq_1m_t = std::sqrt(1.0 - ab_t);
    double sigma = 0.0;
    if (eta > 0.0 && t_prev >= 0)
        sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    const double sq_ab_p = std::sqrt(ab_p);
    Tensor<S> out(x_t.shape());
    const auto& xv = x_t.values();
    const auto& ev = eps_hat.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) {
        double x0 = (static_cast<double>(xv[i]) - sq_1m_t * static_cast<double>(ev[i])) / sq_ab_t;
        x0 = std::min(1.0, std::max(-1.0, x0));
        double v = sq_ab_p * x0 + dir * static_cast<double>(ev[i]);
        if (sigma > 0.0) {
            if (!rng) throw ContractError("eta > 0 requires an rng");
            v += sigma * rng->normal();
        }
        ov[i] = static_cast<S>(v);
    }
    return out;
}

}  // namespace df
