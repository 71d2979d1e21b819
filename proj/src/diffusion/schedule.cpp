#include <cmath>
#include <cstring>
#include <numbers>

#include "pfedgpa/diffusion.hpp"

namespace pfedgpa {

namespace {

NoiseSchedule from_betas(std::vector<double> betas_1based, ScheduleKind kind) {
    NoiseSchedule s;
    s.T = betas_1based.size() - 1;
    s.kind = kind;
    s.betas = std::move(betas_1based);
    s.alphas.assign(s.T + 1, 0.0);
    s.alpha_bars.assign(s.T + 1, 1.0);
    s.sigmas.assign(s.T + 1, 0.0);
    for (std::size_t t = 1; t <= s.T; ++t) {
        s.alphas[t] = 1.0 - s.betas[t];
        s.alpha_bars[t] = s.alpha_bars[t - 1] * s.alphas[t];
        s.sigmas[t] = std::sqrt((1.0 - s.alpha_bars[t - 1]) / (1.0 - s.alpha_bars[t]) * s.betas[t]);
    }
    s.beta_start = s.betas[1];
    s.beta_end = s.betas[s.T];
    return s;
}

}  // namespace

void NoiseSchedule::check_step(std::size_t t) const {
    if (t < 1 || t > T) {
        throw LayoutError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
}

std::uint64_t NoiseSchedule::hash() const {
    // FNV-1a over T and the raw bits of each beta
    std::uint64_t h = 1469598103934665603ULL;
    auto eat = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    eat(T);
    for (std::size_t t = 1; t <= T; ++t) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &betas[t], sizeof bits);
        eat(bits);
    }
    return h;
}

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end, ScheduleKind kind) {
    if (T < 1) {
        throw ConfigError("schedule needs T >= 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1 (got " +
                          std::to_string(beta_start) + ", " + std::to_string(beta_end) + ")");
    }
    std::vector<double> betas(T + 1, 0.0);
    if (kind == ScheduleKind::Linear) {
        for (std::size_t t = 1; t <= T; ++t) {
            betas[t] = T == 1 ? beta_start
                              : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) /
                                                 static_cast<double>(T - 1);
        }
    } else if (kind == ScheduleKind::Cosine) {
        // squared-cosine abar with offset 0.008; betas clipped to [beta_start, beta_end]
        const double off = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / static_cast<double>(T) + off) / (1.0 + off) * std::numbers::pi / 2.0);
            return c * c;
        };
        for (std::size_t t = 1; t <= T; ++t) {
            const double b = 1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t - 1));
            betas[t] = std::clamp(b, beta_start, beta_end);
        }
    } else {
        throw ConfigError("custom schedules are built from an explicit beta table");
    }
    auto s = from_betas(std::move(betas), kind);
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    return s;
}

NoiseSchedule make_schedule(std::vector<double> betas) {
    if (betas.empty()) {
        throw ConfigError("schedule needs T >= 1");
    }
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) {
            throw ConfigError("every beta must lie in (0, 1)");
        }
    }
    betas.insert(betas.begin(), 0.0);
    return from_betas(std::move(betas), ScheduleKind::Custom);
}

NoiseSchedule default_schedule(std::size_t T) {
    const double scale = 1000.0 / static_cast<double>(T);
    return make_schedule(T, std::min(1e-4 * scale, 0.5), std::min(0.02 * scale, 0.999), ScheduleKind::Linear);
}

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear") return ScheduleKind::Linear;
    if (name == "cosine") return ScheduleKind::Cosine;
    throw ConfigError("unknown schedule kind '" + name + "' (expected linear or cosine)");
}

const char* schedule_kind_name(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Linear: return "linear";
        case ScheduleKind::Cosine: return "cosine";
        case ScheduleKind::Custom: return "custom";
    }
    return "?";
}

template <typename T>
std::vector<T> forward_marginal(std::span<const T> x0, std::size_t t, std::span<const T> eps, const NoiseSchedule& s) {
    s.check_step(t);
    if (x0.size() != eps.size()) throw LayoutError("forward_marginal: x0 and eps differ in length");
    const T a = static_cast<T>(std::sqrt(s.alpha_bar(t)));
    const T b = static_cast<T>(std::sqrt(1.0 - s.alpha_bar(t)));
    std::vector<T> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

template <typename T>
std::vector<T> forward_step(std::span<const T> x_prev, std::size_t t, std::span<const T> z, const NoiseSchedule& s) {
    s.check_step(t);
    if (x_prev.size() != z.size()) throw LayoutError("forward_step: x and z differ in length");
    const T a = static_cast<T>(std::sqrt(1.0 - s.beta(t)));
    const T b = static_cast<T>(std::sqrt(s.beta(t)));
    std::vector<T> out(x_prev.size());
    for (std::size_t i = 0; i < x_prev.size(); ++i) out[i] = a * x_prev[i] + b * z[i];
    return out;
}

template <typename T>
std::vector<T> posterior_mean(std::span<const T> x_t, std::span<const T> eps, std::size_t t, const NoiseSchedule& s) {
    s.check_step(t);
    if (x_t.size() != eps.size()) throw LayoutError("posterior_mean: x and eps differ in length");
    const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(s.alpha(t)));
    const T c = static_cast<T>(s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)));
    std::vector<T> out(x_t.size());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = inv_sqrt_alpha * (x_t[i] - c * eps[i]);
    return out;
}

template <typename T>
std::vector<T> score_from_eps(std::span<const T> eps_out, std::size_t t, const NoiseSchedule& s) {
    s.check_step(t);
    const T c = static_cast<T>(-1.0 / std::sqrt(1.0 - s.alpha_bar(t)));
    std::vector<T> out(eps_out.size());
    for (std::size_t i = 0; i < eps_out.size(); ++i) out[i] = c * eps_out[i];
    return out;
}

#define PFEDGPA_INSTANTIATE(T)                                                                                 \
    template std::vector<T> forward_marginal(std::span<const T>, std::size_t, std::span<const T>,              \
                                             const NoiseSchedule&);                                            \
    template std::vector<T> forward_step(std::span<const T>, std::size_t, std::span<const T>,                  \
                                         const NoiseSchedule&);                                                \
    template std::vector<T> posterior_mean(std::span<const T>, std::span<const T>, std::size_t,                \
                                           const NoiseSchedule&);                                              \
    template std::vector<T> score_from_eps(std::span<const T>, std::size_t, const NoiseSchedule&);

PFEDGPA_INSTANTIATE(float)
PFEDGPA_INSTANTIATE(double)
#undef PFEDGPA_INSTANTIATE

}  // namespace pfedgpa
