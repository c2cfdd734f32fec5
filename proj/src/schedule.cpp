#include "denseface/schedule.hpp"

#include <cmath>

namespace df {

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind '" + s + "' (expected linear|cosine)");
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

NoiseSchedule make_schedule(ScheduleKind kind, int T) {
    if (T < 10) throw ConfigError("schedule needs T >= 10, got " + std::to_string(T));
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.beta.resize(static_cast<size_t>(T));
    if (kind == ScheduleKind::linear) {
        const double b0 = 1e-4, b1 = 0.02;
        for (int t = 0; t < T; ++t)
            s.beta[static_cast<size_t>(t)] = b0 + (b1 - b0) * static_cast<double>(t) / static_cast<double>(T - 1);
    } else {
        // cosine: abar(t) ~ f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2)
        const double off = 0.008;
        auto f = [&](double t) {
            const double u = (t / static_cast<double>(T) + off) / (1.0 + off);
            const double c = std::cos(u * 1.57079632679489661923);
            return c * c;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 0; t < T; ++t) {
            const double ab = f(static_cast<double>(t + 1)) / f0;
            double beta = 1.0 - ab / prev;
            beta = std::min(0.999, std::max(1e-8, beta));
            s.beta[static_cast<size_t>(t)] = beta;
            prev *= 1.0 - beta;
        }
    }
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double run = 1.0;
    for (int t = 0; t < T; ++t) {
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        run *= s.alpha[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] = run;
    }
    if (!(s.alpha_bar.front() > 0.99))
        throw NumericError("schedule violates alpha_bar[0] > 0.99");
    if (!(s.alpha_bar.back() < 0.05))
        throw NumericError("schedule violates alpha_bar[T-1] < 0.05");
    for (int t = 1; t < T; ++t)
        if (!(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]))
            throw NumericError("alpha_bar not strictly decreasing at t=" + std::to_string(t));
    return s;
}

SamplerPlan plan_timesteps(int T, int steps, double eta) {
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (steps > T) throw ConfigError("steps " + std::to_string(steps) + " > T " + std::to_string(T));
    SamplerPlan p;
    p.steps = steps;
    p.eta = eta;
    if (steps == 1) {
        p.timesteps = {T - 1};
        return p;
    }
    p.timesteps.resize(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = 1.0 - static_cast<double>(i) / static_cast<double>(steps - 1);
        p.timesteps[static_cast<size_t>(i)] = static_cast<int>(std::lround(frac * (T - 1)));
    }
    for (int i = 1; i < steps; ++i)
        if (p.timesteps[static_cast<size_t>(i)] >= p.timesteps[static_cast<size_t>(i - 1)])
            throw ConfigError("timestep plan not strictly decreasing (T too small for steps)");
    return p;
}

}  // namespace df
