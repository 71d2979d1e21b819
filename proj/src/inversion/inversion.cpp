#include <cmath>

#include "pfedgpa/inversion.hpp"

namespace pfedgpa {

namespace {

void check_latent(const LatentCode& latent, const NoiseSchedule& s) {
    if (latent.schedule_hash != s.hash() || latent.steps() != s.T) {
        throw LayoutError("latent code was extracted under a different schedule (" + std::to_string(latent.steps()) +
                          " steps, schedule T = " + std::to_string(s.T) + ")");
    }
    for (const auto& e : latent.eps) {
        if (e.size() != latent.dim()) throw LayoutError("latent noise vector has the wrong dimension");
    }
}

}  // namespace

LatentCode extract_latent(std::span<const double> theta0, const NoiseSchedule& s, Rng& rng) {
    if (!all_finite<double>(theta0)) throw NumericError("extract_latent: input is not finite", 0);
    LatentCode code;
    code.schedule_hash = s.hash();
    code.eps.resize(s.T);
    std::vector<double> prev(theta0.begin(), theta0.end());
    for (std::size_t t = 1; t <= s.T; ++t) {
        auto z = rng.normal_vector<double>(prev.size());
        prev = forward_step<double>(prev, t, z, s);
        // the implied noise of this step is z itself; keeping the draw avoids
        // the rounding of recomputing it from (theta_t, theta_{t-1})
        code.eps[s.T - t] = std::move(z);
    }
    if (!all_finite<double>(prev)) throw NumericError("extract_latent: forward chain overflowed", s.T);
    code.theta_T = std::move(prev);
    return code;
}

std::vector<double> implied_noise(std::span<const double> theta_t, std::span<const double> theta_prev, std::size_t t,
                                  const NoiseSchedule& s) {
    s.check_step(t);
    if (theta_t.size() != theta_prev.size()) throw LayoutError("implied_noise: vectors differ in length");
    const double a = std::sqrt(1.0 - s.beta(t));
    const double b = std::sqrt(s.beta(t));
    std::vector<double> e(theta_t.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (theta_t[i] - a * theta_prev[i]) / b;
    return e;
}

std::vector<double> reconstruct(const LatentCode& latent, const NoiseSchedule& s) {
    check_latent(latent, s);
    std::vector<double> theta = latent.theta_T;
    for (std::size_t t = s.T; t >= 1; --t) {
        const double a = std::sqrt(1.0 - s.beta(t));
        const double b = std::sqrt(s.beta(t));
        const auto& e = latent.eps_at(t);
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = (theta[i] - b * e[i]) / a;
    }
    return theta;
}

std::vector<double> invert_generate(const NoiseEstimator<double>& est, const LatentCode& latent, const NoiseSchedule& s,
                                    const InvertOptions& opt) {
    check_latent(latent, s);
    if (est.dim() != latent.dim()) {
        throw LayoutError("estimator dimension " + std::to_string(est.dim()) + " does not match latent dimension " +
                          std::to_string(latent.dim()));
    }
    const double sign = opt.sign == NoiseSign::Minus ? -1.0 : 1.0;
    std::vector<double> theta = latent.theta_T;
    for (std::size_t t = s.T; t >= 1; --t) {
        auto eps = est.predict_one(theta, t);
        theta = posterior_mean<double>(theta, eps, t, s);
        if (!opt.suppress_sigma) {
            const double sigma = sign * s.sigma(t);
            const auto& e = latent.eps_at(t);
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += sigma * e[i];
        }
        if (!all_finite<double>(theta)) {
            throw NumericError("invert_generate: non-finite value at step " + std::to_string(t), t);
        }
    }
    return theta;
}

}  // namespace pfedgpa
