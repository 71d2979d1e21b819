#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pfedgpa/diffusion.hpp"

namespace pfedgpa {

/// (theta_T, eps_T .. eps_1). `eps[k]` holds the noise of step T - k, so the
/// vector is ordered the way the reverse chain consumes it.
struct LatentCode {
    std::vector<double> theta_T;
    std::vector<std::vector<double>> eps;
    std::uint64_t schedule_hash = 0;

    std::size_t dim() const noexcept { return theta_T.size(); }
    std::size_t steps() const noexcept { return eps.size(); }
    /// Noise recorded for diffusion step t (1-based).
    const std::vector<double>& eps_at(std::size_t t) const { return eps.at(eps.size() - t); }
};

/// eps_t = (theta_t - sqrt(1 - beta_t) theta_{t-1}) / sqrt(beta_t)
std::vector<double> implied_noise(std::span<const double> theta_t, std::span<const double> theta_prev, std::size_t t,
                                  const NoiseSchedule& s);

/// Runs theta_0 -> theta_T one forward step at a time and records each
/// step's implied noise, which is exactly the draw that produced it.
LatentCode extract_latent(std::span<const double> theta0, const NoiseSchedule& s, Rng& rng);

/// theta_{t-1} = (theta_t - sqrt(beta_t) eps_t) / sqrt(1 - beta_t), from t = T down to 1.
std::vector<double> reconstruct(const LatentCode& latent, const NoiseSchedule& s);

enum class NoiseSign : std::uint8_t { Minus, Plus };

struct InvertOptions {
    /// Minus follows the inversion formula as written; Plus matches the sampler's +sigma z.
    NoiseSign sign = NoiseSign::Minus;
    /// Forces every sigma_t to 0 (mean-only denoising from theta_T).
    bool suppress_sigma = false;
};

/// theta~_{t-1} = mu_phi(theta~_t, t) -/+ sigma_t eps_t starting at theta~_T = latent.theta_T.
std::vector<double> invert_generate(const NoiseEstimator<double>& est, const LatentCode& latent, const NoiseSchedule& s,
                                    const InvertOptions& opt = {});

}  // namespace pfedgpa
