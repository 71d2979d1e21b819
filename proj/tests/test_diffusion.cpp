#include <doctest.h>

#include <cmath>

#include "pfedgpa/diffusion.hpp"
#include "support/oracles.hpp"

using namespace pfedgpa;

namespace {

// Recovers the injected noise exactly when every example shares the same x0.
class KnownX0Estimator final : public NoiseEstimator<double> {
public:
    KnownX0Estimator(std::vector<double> x0, const NoiseSchedule& s) : x0_(std::move(x0)), s_(s) {}
    std::size_t dim() const override { return x0_.size(); }
    std::vector<double> predict(std::span<const double> x, std::span<const std::size_t> steps) const override {
        std::vector<double> out(x.size());
        const std::size_t d = x0_.size();
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const double a = std::sqrt(s_.alpha_bar(steps[i]));
            const double b = std::sqrt(1.0 - s_.alpha_bar(steps[i]));
            for (std::size_t k = 0; k < d; ++k) out[i * d + k] = (x[i * d + k] - a * x0_[k]) / b;
        }
        return out;
    }

private:
    std::vector<double> x0_;
    const NoiseSchedule& s_;
};

std::vector<NoiseSchedule> fixture_schedules() {
    return {default_schedule(1000), default_schedule(100), make_schedule(50, 1e-3, 0.05, ScheduleKind::Cosine),
            make_schedule(std::vector<double>{0.5, 0.5}), make_schedule(10, 0.01, 0.01)};
}

}  // namespace

TEST_CASE("two-step schedule products") {
    auto s = make_schedule(std::vector<double>{0.5, 0.5});
    CHECK(s.T == 2);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(1) == 0.5);
    CHECK(s.alpha_bar(2) == 0.25);
    CHECK(s.sigma(1) == 0.0);
}

TEST_CASE("linear T=1000 schedule ends below 1e-4") {
    auto s = make_schedule(1000, 1e-4, 0.02);
    std::vector<double> betas(s.betas.begin() + 1, s.betas.end());
    const double direct = oracle::alpha_bar_product(betas, 1000);
    CHECK(direct < 1e-4);
    CHECK(s.alpha_bar(1000) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(s.beta(1) == 1e-4);
    CHECK(s.beta(1000) == doctest::Approx(0.02));
}

TEST_CASE("schedule identities hold on every fixture") {
    for (const auto& s : fixture_schedules()) {
        CHECK(s.sigma(1) == 0.0);
        for (std::size_t t = 1; t <= s.T; ++t) {
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
            const double expect = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
            CHECK(std::abs(s.sigma(t) * s.sigma(t) - expect) <= 1e-12);
        }
    }
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.01, 1.0), ConfigError);
    CHECK_THROWS_AS(make_schedule(0, 0.01, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(std::vector<double>{0.5, 1.5}), ConfigError);
    CHECK_THROWS_AS(parse_schedule_kind("quadratic"), ConfigError);
    CHECK(default_schedule(100).hash() != default_schedule(1000).hash());
    CHECK(default_schedule(100).hash() == default_schedule(100).hash());
}

TEST_CASE("forward_marginal closed forms") {
    auto s = default_schedule(100);
    std::vector<double> x0{1.0, -2.0, 0.5};
    std::vector<double> zero(3, 0.0);
    std::vector<double> eps{0.3, 0.1, -1.0};
    auto a = forward_marginal<double>(x0, 40, zero, s);
    auto b = forward_marginal<double>(zero, 40, eps, s);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i] == doctest::Approx(std::sqrt(s.alpha_bar(40)) * x0[i]));
        CHECK(b[i] == doctest::Approx(std::sqrt(1.0 - s.alpha_bar(40)) * eps[i]));
    }
    CHECK_THROWS_AS(forward_marginal<double>(x0, 0, eps, s), LayoutError);
    CHECK_THROWS_AS(forward_marginal<double>(x0, 101, eps, s), LayoutError);
}

TEST_CASE("forward_marginal Monte Carlo moments") {
    auto s = default_schedule(100);
    const std::size_t t = 30;
    const double x0v = 1.7;
    Rng rng(11);
    std::vector<double> xs;
    xs.reserve(100000);
    for (int i = 0; i < 100000; ++i) {
        const double e = rng.normal();
        xs.push_back(forward_marginal<double>(std::span<const double>(&x0v, 1), t, std::span<const double>(&e, 1), s)[0]);
    }
    const double var = 1.0 - s.alpha_bar(t);
    const double se = std::sqrt(var / 100000.0);
    CHECK(std::abs(oracle::mean(xs) - std::sqrt(s.alpha_bar(t)) * x0v) <= 3.0 * se);
    CHECK(std::abs(oracle::variance(xs) - var) <= 0.05 * var);
}

TEST_CASE("forward_step closed forms") {
    auto s = default_schedule(1000);
    std::vector<double> x{2.0, -1.0};
    std::vector<double> zero(2, 0.0);
    auto y = forward_step<double>(x, 1, zero, s);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(y[i] - x[i]) <= s.beta(1) * std::abs(x[i]));
    std::vector<double> z{0.4, -0.7};
    auto w = forward_step<double>(zero, 500, z, s);
    for (std::size_t i = 0; i < 2; ++i) CHECK(w[i] == doctest::Approx(std::sqrt(s.beta(500)) * z[i]));
}

TEST_CASE("ddpm_loss with an exact estimator is zero") {
    auto s = default_schedule(100);
    std::vector<double> x0{0.5, -1.0, 2.0, 0.0};
    KnownX0Estimator est(x0, s);
    Rng rng(3);
    std::vector<std::vector<double>> batch(32, x0);
    CHECK(ddpm_loss<double>(est, batch, s, rng) < 1e-20);
}

TEST_CASE("ddpm_loss with a zero estimator concentrates at d") {
    auto s = default_schedule(100);
    const std::size_t d = 8, n = 20000;
    ZeroEstimator<double> est(d);
    Rng rng(4);
    std::vector<std::vector<double>> batch(n, std::vector<double>(d, 1.0));
    // chi-square with d dof: sd of the batch mean is sqrt(2d / n)
    const double loss = ddpm_loss<double>(est, batch, s, rng);
    CHECK(std::abs(loss - static_cast<double>(d)) <= 4.0 * std::sqrt(2.0 * d / n));
    CHECK_THROWS_AS(ddpm_loss<double>(est, {}, s, rng), LayoutError);
}

TEST_CASE("reverse_step closed forms") {
    auto s = default_schedule(100);
    ZeroEstimator<double> est(3);
    std::vector<double> x{1.0, 2.0, -3.0};
    std::vector<double> zero(3, 0.0);
    auto y = reverse_step<double>(est, x, 50, zero, s);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(s.alpha(50))));
    std::vector<double> z1{5.0, 5.0, 5.0}, z2{-9.0, 1.0, 0.0};
    CHECK(reverse_step<double>(est, x, 1, z1, s) == reverse_step<double>(est, x, 1, z2, s));
    CHECK_THROWS_AS(reverse_step<double>(est, x, 0, zero, s), LayoutError);
    CHECK_THROWS_AS(reverse_step<double>(est, x, 101, zero, s), LayoutError);
}

TEST_CASE("score_from_eps") {
    auto s = default_schedule(100);
    std::vector<double> zero(4, 0.0);
    for (double v : score_from_eps<double>(zero, 20, s)) CHECK(v == 0.0);

    Rng rng(5);
    for (std::size_t t : {1u, 10u, 60u, 100u}) {
        auto x0 = rng.normal_vector<double>(4);
        auto eps = rng.normal_vector<double>(4);
        auto xt = forward_marginal<double>(x0, t, eps, s);
        auto score = score_from_eps<double>(eps, t, s);
        const double ab = s.alpha_bar(t);
        for (std::size_t i = 0; i < 4; ++i) {
            const double analytic = -(xt[i] - std::sqrt(ab) * x0[i]) / (1.0 - ab);
            CHECK(score[i] == doctest::Approx(analytic).epsilon(1e-10));
        }
        std::vector<double> twice(eps);
        for (auto& v : twice) v *= 2.0;
        auto score2 = score_from_eps<double>(twice, t, s);
        for (std::size_t i = 0; i < 4; ++i) CHECK(score2[i] == doctest::Approx(2.0 * score[i]));
    }
}

TEST_CASE("net estimator output shape and precision agreement") {
    for (std::string kind : {"mlp", "unet"}) {
        EstimatorConfig cfg;
        cfg.kind = kind;
        cfg.width = 16;
        cfg.time_dim = 8;
        cfg.unet_channels = 4;
        Rng rng(6);
        NetEstimator est(10, cfg, rng);
        CHECK(est.kind() == kind);
        auto xf = rng.normal_vector<float>(30);
        std::vector<double> xd(xf.begin(), xf.end());
        std::vector<std::size_t> steps{1, 50, 100};
        auto yf = static_cast<const NoiseEstimator<float>&>(est).predict(xf, steps);
        auto yd = static_cast<const NoiseEstimator<double>&>(est).predict(xd, steps);
        REQUIRE(yf.size() == 30);
        REQUIRE(yd.size() == 30);
        for (std::size_t i = 0; i < 30; ++i) CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-4));
    }
    EstimatorConfig bad;
    bad.kind = "transformer";
    Rng rng(1);
    CHECK_THROWS_AS(NetEstimator(4, bad, rng), ConfigError);
}

TEST_CASE("trained estimator beats the zero baseline and matches 1-D Gaussian moments") {
    auto s = default_schedule(100);
    Rng rng(7);
    const double mu = 1.5, sd = 0.5;
    std::vector<std::vector<float>> data;
    for (int i = 0; i < 1000; ++i) data.push_back({static_cast<float>(mu + sd * rng.normal())});
    EstimatorConfig ecfg;
    ecfg.width = 64;
    DiffusionTrainConfig tcfg;
    tcfg.steps = 1500;
    tcfg.lr = 2e-3;
    auto est = train_diffusion(data, ecfg, tcfg, s, rng);
    CHECK(est.loss_trace().size() == 1500);
    CHECK(est.steps_taken() == 1500);

    std::vector<std::vector<float>> eval(data.begin(), data.begin() + 500);
    Rng lr(8);
    const double trained = ddpm_loss<float>(est, eval, s, lr);
    CHECK(trained < 1.0);

    Rng sr(9);
    auto samples = sample<float>(est, s, sr, 4000);
    std::vector<double> xs;
    for (auto& v : samples) xs.push_back(v[0]);
    CHECK(std::abs(oracle::mean(xs) - mu) <= 0.1 * mu);
    CHECK(std::abs(std::sqrt(oracle::variance(xs)) - sd) <= 0.1 * sd);
}

TEST_CASE("training rejects tiny datasets and estimator round-trips its parameters") {
    auto s = default_schedule(10);
    Rng rng(1);
    EstimatorConfig cfg;
    cfg.width = 8;
    DiffusionTrainConfig tcfg;
    CHECK_THROWS_AS(train_diffusion({{1.0f}}, cfg, tcfg, s, rng), LayoutError);

    NetEstimator a(3, cfg, rng);
    NetEstimator b(3, cfg, a.params());
    std::vector<float> x{0.1f, 0.2f, 0.3f};
    CHECK(static_cast<const NoiseEstimator<float>&>(a).predict_one(x, 4) ==
          static_cast<const NoiseEstimator<float>&>(b).predict_one(x, 4));
    CHECK_THROWS_AS(NetEstimator(3, cfg, std::vector<float>(5)), LayoutError);
}
