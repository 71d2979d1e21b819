#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pfedgpa {

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8), or heavy-ball
/// momentum when `adaptive` is false.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(std::size_t n, bool adaptive, double momentum = 0.9)
        : adaptive_(adaptive), momentum_(static_cast<float>(momentum)), m_(n, 0.0f), v_(adaptive ? n : 0, 0.0f) {}

    void step(std::span<float> params, std::span<const float> grads, double lr) {
        ++t_;
        const auto a = static_cast<float>(lr);
        if (!adaptive_) {
            for (std::size_t k = 0; k < params.size(); ++k) {
                m_[k] = momentum_ * m_[k] + grads[k];
                params[k] -= a * m_[k];
            }
            return;
        }
        const float c1 = 1.0f - static_cast<float>(std::pow(0.9, static_cast<double>(t_)));
        const float c2 = 1.0f - static_cast<float>(std::pow(0.999, static_cast<double>(t_)));
        for (std::size_t k = 0; k < params.size(); ++k) {
            m_[k] = 0.9f * m_[k] + 0.1f * grads[k];
            v_[k] = 0.999f * v_[k] + 0.001f * grads[k] * grads[k];
            params[k] -= a * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + 1e-8f);
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    bool adaptive_ = true;
    float momentum_ = 0.9f;
    std::vector<float> m_, v_;
    std::size_t t_ = 0;
};

/// Flags a run whose loss stays above 10x its first value for 100 consecutive steps.
class DivergenceGuard {
public:
    /// True once the run counts as diverged.
    bool observe(double loss) {
        if (initial_ < 0.0) initial_ = loss;
        run_ = loss > 10.0 * initial_ ? run_ + 1 : 0;
        return run_ >= 100;
    }
    double initial() const noexcept { return initial_; }

private:
    double initial_ = -1.0;
    std::size_t run_ = 0;
};

}  // namespace pfedgpa
