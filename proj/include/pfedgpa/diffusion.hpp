#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/optim.hpp"
#include "pfedgpa/record.hpp"
#include "pfedgpa/rng.hpp"

namespace pfedgpa {

enum class ScheduleKind : std::uint8_t { Linear = 0, Cosine = 1, Custom = 2 };

/// beta_1..beta_T and the derived tables. All tables are indexed by the
/// 1-based diffusion step; index 0 of alpha_bar is 1 by definition.
struct NoiseSchedule {
    std::size_t T = 0;
    ScheduleKind kind = ScheduleKind::Linear;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> betas;      // [0] unused
    std::vector<double> alphas;     // [0] unused
    std::vector<double> alpha_bars; // [0] == 1
    std::vector<double> sigmas;     // [0] unused, sigma_1 == 0

    double beta(std::size_t t) const { return betas.at(t); }
    double alpha(std::size_t t) const { return alphas.at(t); }
    double alpha_bar(std::size_t t) const { return alpha_bars.at(t); }
    double sigma(std::size_t t) const { return sigmas.at(t); }
    void check_step(std::size_t t) const;

    /// Stable 64-bit fingerprint of T and the beta table.
    std::uint64_t hash() const;
};

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end, ScheduleKind kind = ScheduleKind::Linear);
/// Schedule from an explicit beta table (beta_1..beta_T).
NoiseSchedule make_schedule(std::vector<double> betas);
/// Linear 1e-4 -> 0.02 at T = 1000; other T rescale both ends by 1000 / T.
NoiseSchedule default_schedule(std::size_t T);
ScheduleKind parse_schedule_kind(const std::string& name);
const char* schedule_kind_name(ScheduleKind kind);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename T>
std::vector<T> forward_marginal(std::span<const T> x0, std::size_t t, std::span<const T> eps, const NoiseSchedule& s);

/// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) z
template <typename T>
std::vector<T> forward_step(std::span<const T> x_prev, std::size_t t, std::span<const T> z, const NoiseSchedule& s);

/// The reverse-chain mean for a given noise estimate:
/// (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)
template <typename T>
std::vector<T> posterior_mean(std::span<const T> x_t, std::span<const T> eps, std::size_t t, const NoiseSchedule& s);

/// s(x_t, t) = -eps / sqrt(1 - abar_t)
template <typename T>
std::vector<T> score_from_eps(std::span<const T> eps_out, std::size_t t, const NoiseSchedule& s);

/// Predicts the injected noise for a batch of row vectors.
template <typename T>
class NoiseEstimator {
public:
    virtual ~NoiseEstimator() = default;
    virtual std::size_t dim() const = 0;
    /// x holds n = steps.size() rows of dim() values; returns n*dim() values.
    virtual std::vector<T> predict(std::span<const T> x, std::span<const std::size_t> steps) const = 0;

    std::vector<T> predict_one(std::span<const T> x, std::size_t t) const {
        const std::size_t step[1] = {t};
        return predict(x, step);
    }
};

/// Returns zeros; handy as a baseline and in tests.
template <typename T>
class ZeroEstimator final : public NoiseEstimator<T> {
public:
    explicit ZeroEstimator(std::size_t dim) : dim_(dim) {}
    std::size_t dim() const override { return dim_; }
    std::vector<T> predict(std::span<const T>, std::span<const std::size_t> steps) const override {
        return std::vector<T>(steps.size() * dim_, T(0));
    }

private:
    std::size_t dim_;
};

struct EstimatorConfig {
    /// "mlp", "unet", or "auto" (mlp up to 4096 dims, unet above)
    std::string kind = "auto";
    std::size_t width = 256;
    std::size_t depth = 3;
    std::size_t time_dim = 64;
    std::size_t unet_channels = 16;
};

struct DiffusionTrainConfig {
    std::size_t steps = 200;
    std::size_t batch_size = 64;
    /// "adam" or "momentum"
    std::string optimizer = "adam";
    double lr = 1e-4;
    double momentum = 0.9;
    /// examples per replay chunk; fixes the reduction order
    std::size_t chunk = 64;
    std::size_t workers = 0;
};

/// Sinusoidal embedding of a diffusion step.
std::vector<double> time_embedding(std::size_t t, std::size_t dim);

/// Trainable eps_phi(x_t, t): an MLP or 1-D conv U-Net with additive
/// sinusoidal time conditioning. Parameters live in float; double-precision
/// prediction uses a converted copy.
class NetEstimator final : public NoiseEstimator<float>, public NoiseEstimator<double> {
public:
    NetEstimator(std::size_t dim, const EstimatorConfig& cfg, Rng& init_rng);
    /// Rebuilds an estimator around existing parameters (checkpoint restore).
    NetEstimator(std::size_t dim, const EstimatorConfig& cfg, std::vector<float> params);

    NetEstimator(const NetEstimator& other);
    NetEstimator& operator=(const NetEstimator&) = delete;

    using NoiseEstimator<float>::predict_one;
    using NoiseEstimator<double>::predict_one;

    std::size_t dim() const override { return dim_; }
    std::vector<float> predict(std::span<const float> x, std::span<const std::size_t> steps) const override;
    std::vector<double> predict(std::span<const double> x, std::span<const std::size_t> steps) const override;

    /// One optimizer step on mean ||eps - eps_phi(x_t, t)||^2; returns the loss.
    double train_step(std::span<const float> x_t, std::span<const std::size_t> steps, std::span<const float> eps,
                      const DiffusionTrainConfig& cfg);

    const EstimatorConfig& config() const noexcept { return cfg_; }
    const std::string& kind() const noexcept { return kind_; }
    const Layout& layout() const { return record_->layout(); }
    const std::vector<float>& params() const noexcept { return params_; }
    void set_params(std::vector<float> params);
    std::vector<double>& loss_trace() noexcept { return loss_trace_; }
    const std::vector<double>& loss_trace() const noexcept { return loss_trace_; }
    std::size_t steps_taken() const noexcept { return opt_.steps(); }

private:
    void build();
    template <typename T>
    Batch<T> make_batch(std::span<const T> x, std::span<const std::size_t> steps, std::span<const T> eps) const;
    const std::vector<double>& double_params() const;

    std::size_t dim_;
    std::size_t padded_dim_;
    EstimatorConfig cfg_;
    std::string kind_;
    std::shared_ptr<const Record> record_;
    std::vector<float> params_;
    Optimizer opt_;
    std::string opt_kind_;
    std::vector<double> loss_trace_;

    mutable std::mutex cache_mu_;
    mutable std::vector<double> params_d_;
    mutable bool dirty_ = true;
};

/// Raised when training loss stays above 10x its initial value for 100 consecutive steps.
class DivergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Mean over the batch of ||eps - eps_phi(x_t, t)||^2 with t ~ U{1..T}, eps ~ N(0, I).
template <typename T>
double ddpm_loss(const NoiseEstimator<T>& est, const std::vector<std::vector<T>>& batch_x0, const NoiseSchedule& s,
                 Rng& rng);

/// x_{t-1} = posterior_mean(x_t, eps_phi(x_t, t)) + sigma_t z
template <typename T>
std::vector<T> reverse_step(const NoiseEstimator<T>& est, std::span<const T> x_t, std::size_t t, std::span<const T> z,
                            const NoiseSchedule& s);

/// Ancestral sampling of n vectors from x_T ~ N(0, I).
template <typename T>
std::vector<std::vector<T>> sample(const NoiseEstimator<T>& est, const NoiseSchedule& s, Rng& rng, std::size_t n);

/// Runs cfg.steps optimizer steps of the noise-prediction objective on
/// `dataset`, appending to the estimator's loss trace.
void train_steps(NetEstimator& est, const std::vector<std::vector<float>>& dataset, const DiffusionTrainConfig& cfg,
                 const NoiseSchedule& s, Rng& rng);

NetEstimator train_diffusion(const std::vector<std::vector<float>>& dataset, const EstimatorConfig& est_cfg,
                             const DiffusionTrainConfig& cfg, const NoiseSchedule& s, Rng& rng);

}  // namespace pfedgpa
