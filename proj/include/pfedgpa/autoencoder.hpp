#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/optim.hpp"
#include "pfedgpa/record.hpp"
#include "pfedgpa/rng.hpp"

namespace pfedgpa {

struct AutoencoderConfig {
    /// "conv": three stride-2 conv1d blocks with SiLU plus a linear path;
    /// "linear": a single affine map each way
    std::string kind = "conv";
    std::size_t latent_dim = 64;
    std::size_t channels = 8;
    /// Only for "linear" with latent_dim == dim: start both maps at the identity.
    bool identity_init = false;
    double augment_sigma_input = 1e-3;
    double augment_sigma_latent = 1e-3;
    std::size_t steps = 500;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::size_t chunk = 64;
    std::size_t workers = 0;
};

/// Encoder and decoder over one flat parameter vector (encoder block first).
class Autoencoder {
public:
    Autoencoder(std::size_t dim, const AutoencoderConfig& cfg, Rng& init_rng);
    Autoencoder(std::size_t dim, const AutoencoderConfig& cfg, std::vector<float> params);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t latent_dim() const noexcept { return cfg_.latent_dim; }
    const AutoencoderConfig& config() const noexcept { return cfg_; }
    const Layout& layout() const { return train_->layout(); }
    const std::vector<float>& params() const noexcept { return params_; }
    std::vector<double>& loss_trace() noexcept { return loss_trace_; }
    const std::vector<double>& loss_trace() const noexcept { return loss_trace_; }

    /// Latent of `vec`; with augment set, adds N(0, augment_sigma_latent^2) noise from `rng`.
    std::vector<double> encode(std::span<const double> vec, Rng& rng, bool augment = false) const;
    std::vector<double> decode(std::span<const double> latent) const;

    /// One Adam step on the augmented reconstruction loss of `batch`.
    double train_step(const std::vector<std::vector<float>>& batch, Rng& rng);

private:
    void build();
    std::size_t encoder_size() const;

    std::size_t dim_;
    std::size_t padded_;
    AutoencoderConfig cfg_;
    std::shared_ptr<Record> train_, enc_, dec_;
    std::vector<float> params_;
    std::vector<double> loss_trace_;
    Optimizer opt_;
};

Autoencoder train_autoencoder(const std::vector<std::vector<float>>& vectors, const AutoencoderConfig& cfg, Rng& rng);

}  // namespace pfedgpa
