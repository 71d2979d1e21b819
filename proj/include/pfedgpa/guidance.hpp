#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/client.hpp"
#include "pfedgpa/generative.hpp"

namespace pfedgpa {

struct GuidanceConfig {
    double omega = 0.5;
    std::size_t init_rounds = 5;
    /// reverse steps per initialization round
    std::size_t denoise_steps = 10;
    /// step the current parameters are diffused to before denoising; 0 means denoise_steps
    std::size_t start_step = 0;
    /// "raw" uses the parameter delta as is; "per-lr" divides it by the local learning rate
    std::string delta_scale = "raw";
    /// "algorithm" subtracts the delta as the update rule writes it; "score" subtracts
    /// the log-likelihood gradient it stands in for, i.e. flips the delta's sign
    std::string delta_sign = "algorithm";

    std::size_t resolved_start() const noexcept { return start_step == 0 ? denoise_steps : start_step; }
};

/// eps_phi(theta, t) - (1 + omega) * scale * delta
std::vector<double> guided_eps(const NoiseEstimator<double>& est, std::span<const double> theta, std::size_t t,
                               std::span<const double> delta, double omega, double scale = 1.0);

struct InitRound {
    std::size_t round = 0;
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Guided fast initialization of a joining client. For l = 1..I: a local
/// update, the delta theta_{l-1} - theta_l in estimator space, partial
/// diffusion to start_step and `denoise_steps` guided reverse steps. A final
/// local update produces the result. `trace` receives the client's test
/// metrics after every round, the last entry being the final update.
std::vector<float> initialize_new_client(const GenerativeModel& g, ClientState& client, const GuidanceConfig& gcfg,
                                         const LocalUpdateConfig& lcfg, Rng& rng,
                                         std::vector<InitRound>* trace = nullptr);

}  // namespace pfedgpa
