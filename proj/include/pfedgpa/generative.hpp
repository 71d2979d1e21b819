#pragma once

#include <memory>
#include <span>
#include <vector>

#include "pfedgpa/autoencoder.hpp"
#include "pfedgpa/diffusion.hpp"
#include "pfedgpa/inversion.hpp"
#include "pfedgpa/layout.hpp"

namespace pfedgpa {

/// A read-only view of the server's generative model: which layers it
/// generates, how they are normalized, the optional autoencoder, and the
/// estimator and schedule that act in the resulting space.
struct GenerativeModel {
    Layout layout;
    LayerMask mask;
    NormStats norm;
    std::shared_ptr<const Autoencoder> ae;
    std::shared_ptr<const NoiseEstimator<double>> estimator;
    NoiseSchedule schedule;

    /// Dimension the estimator works in.
    std::size_t model_dim() const;
    /// Full client parameters -> estimator space (generated layers, normalized, encoded).
    std::vector<double> encode(std::span<const float> full) const;
    /// Estimator space -> full parameters; retained layers are copied from `full`.
    std::vector<float> decode(std::span<const double> z, std::span<const float> full) const;
};

struct GenerateOptions {
    InvertOptions invert;
};

/// Inversion-based personalization: latent of the client's own parameters,
/// then latent-guided denoising.
std::vector<float> generate_personalized(const GenerativeModel& g, std::span<const float> full, Rng& rng,
                                         const GenerateOptions& opt = {});

/// Plain ancestral sample from the estimator, ignoring the client's parameters
/// except for the retained layers.
std::vector<float> generate_unconditional(const GenerativeModel& g, std::span<const float> full, Rng& rng);

}  // namespace pfedgpa
