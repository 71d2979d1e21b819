#include <doctest.h>

#include <cmath>

#include "pfedgpa/inversion.hpp"
#include "support/oracles.hpp"

using namespace pfedgpa;

namespace {

// eps(x, t) = c_t * x
class LinearEstimator final : public NoiseEstimator<double> {
public:
    LinearEstimator(std::size_t dim, std::vector<double> c) : dim_(dim), c_(std::move(c)) {}
    std::size_t dim() const override { return dim_; }
    std::vector<double> predict(std::span<const double> x, std::span<const std::size_t> steps) const override {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
            for (std::size_t k = 0; k < dim_; ++k) out[i * dim_ + k] = c_[steps[i]] * x[i * dim_ + k];
        }
        return out;
    }

private:
    std::size_t dim_;
    std::vector<double> c_;
};

double max_rel(const std::vector<double>& a, std::span<const double> b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / std::max(den, 1e-300);
}

}  // namespace

TEST_CASE("implied noise from a zero predecessor is the injected draw") {
    auto s = default_schedule(100);
    Rng rng(1);
    auto z = rng.normal_vector<double>(16);
    std::vector<double> zero(16, 0.0);
    for (std::size_t t : {1u, 37u, 100u}) {
        auto xt = forward_step<double>(zero, t, z, s);
        auto e = implied_noise(xt, zero, t, s);
        for (std::size_t i = 0; i < z.size(); ++i) CHECK(e[i] == doctest::Approx(z[i]).epsilon(1e-14));
    }
}

TEST_CASE("extracted noises are the forward draws") {
    auto s = default_schedule(50);
    Rng rng(2);
    auto theta0 = rng.normal_vector<double>(12);
    Rng a(99), b(99);
    auto code = extract_latent(theta0, s, a);
    REQUIRE(code.steps() == 50);
    REQUIRE(code.dim() == 12);
    // replay the chain with the same stream
    std::vector<double> prev = theta0;
    for (std::size_t t = 1; t <= s.T; ++t) {
        auto z = b.normal_vector<double>(12);
        CHECK(code.eps_at(t) == z);
        auto cur = forward_step<double>(prev, t, z, s);
        auto e = implied_noise(cur, prev, t, s);
        for (std::size_t i = 0; i < 12; ++i) CHECK(e[i] == doctest::Approx(z[i]).epsilon(1e-10));
        prev = cur;
    }
    CHECK(code.theta_T == prev);
}

TEST_CASE("extracted noises are standard normal") {
    auto s = default_schedule(20);
    Rng rng(3);
    std::vector<double> theta0{5.0, -3.0, 0.25, 100.0};
    std::vector<double> first, last;
    for (int k = 0; k < 5000; ++k) {
        auto code = extract_latent(theta0, s, rng);
        first.insert(first.end(), code.eps_at(1).begin(), code.eps_at(1).end());
        last.insert(last.end(), code.eps_at(20).begin(), code.eps_at(20).end());
    }
    for (const auto* v : {&first, &last}) {
        CHECK(std::abs(oracle::mean(*v)) <= 0.05);
        CHECK(std::abs(oracle::variance(*v) - 1.0) <= 0.05);
    }
}

TEST_CASE("reconstruct inverts extract_latent to 1e-8") {
    Rng rng(4);
    for (std::size_t T : {100u, 1000u}) {
        auto s = default_schedule(T);
        for (std::size_t d : {16u, 300u, 4096u}) {
            auto theta0 = rng.normal_vector<double>(d);
            auto code = extract_latent(theta0, s, rng);
            CHECK(max_rel(reconstruct(code, s), theta0) <= 1e-8);
        }
    }
}

TEST_CASE("reconstruct closed forms") {
    auto s = default_schedule(1000);
    LatentCode code;
    code.schedule_hash = s.hash();
    code.theta_T = {1.0, -2.0};
    code.eps.assign(1000, std::vector<double>(2, 0.0));
    auto r = reconstruct(code, s);
    CHECK(r[0] == doctest::Approx(1.0 / std::sqrt(s.alpha_bar(1000))).epsilon(1e-10));
    CHECK(r[1] == doctest::Approx(-2.0 / std::sqrt(s.alpha_bar(1000))).epsilon(1e-10));

    Rng rng(5);
    std::vector<double> zero(64, 0.0);
    auto back = reconstruct(extract_latent(zero, s, rng), s);
    for (double v : back) CHECK(std::abs(v) <= 1e-10);

    auto other = default_schedule(100);
    CHECK_THROWS_AS(reconstruct(code, other), LayoutError);
}

TEST_CASE("invert_generate matches a hand-unrolled two-step chain") {
    auto s = make_schedule(std::vector<double>{0.1, 0.3});
    const std::vector<double> c{0.0, 0.4, -0.7};
    LinearEstimator est(1, c);
    LatentCode code;
    code.schedule_hash = s.hash();
    code.theta_T = {1.3};
    code.eps = {{0.8}, {-0.5}};  // eps_2, eps_1

    const double b1 = 0.1, b2 = 0.3;
    const double ab1 = 1 - b1, ab2 = (1 - b1) * (1 - b2);
    const double sigma2 = std::sqrt((1 - ab1) / (1 - ab2) * b2);
    const double x2 = 1.3;
    const double x1 = (x2 - b2 / std::sqrt(1 - ab2) * c[2] * x2) / std::sqrt(1 - b2) - sigma2 * 0.8;
    const double x0 = (x1 - b1 / std::sqrt(1 - ab1) * c[1] * x1) / std::sqrt(1 - b1);  // sigma_1 = 0
    CHECK(invert_generate(est, code, s)[0] == doctest::Approx(x0).epsilon(1e-14));

    InvertOptions plus;
    plus.sign = NoiseSign::Plus;
    const double x1p = x1 + 2 * sigma2 * 0.8;
    const double x0p = (x1p - b1 / std::sqrt(1 - ab1) * c[1] * x1p) / std::sqrt(1 - b1);
    CHECK(invert_generate(est, code, s, plus)[0] == doctest::Approx(x0p).epsilon(1e-14));
}

TEST_CASE("sigma-suppressed generation ignores the latent noises") {
    auto s = default_schedule(30);
    EstimatorConfig cfg;
    cfg.width = 16;
    cfg.time_dim = 8;
    Rng rng(6);
    NetEstimator est(5, cfg, rng);
    auto a = extract_latent(rng.normal_vector<double>(5), s, rng);
    auto b = a;
    for (auto& e : b.eps) e = rng.normal_vector<double>(5);
    InvertOptions opt;
    opt.suppress_sigma = true;
    CHECK(invert_generate(est, a, s, opt) == invert_generate(est, b, s, opt));

    // plain mean-only sampling from the same theta_T
    std::vector<double> x = a.theta_T;
    for (std::size_t t = s.T; t >= 1; --t) x = posterior_mean<double>(x, est.predict_one(x, t), t, s);
    CHECK(invert_generate(est, a, s, opt) == x);
}

TEST_CASE("distinct sources give distinct generations") {
    auto s = default_schedule(40);
    EstimatorConfig cfg;
    cfg.width = 16;
    cfg.time_dim = 8;
    Rng rng(7);
    NetEstimator est(6, cfg, rng);
    for (int k = 0; k < 5; ++k) {
        auto a = extract_latent(rng.normal_vector<double>(6), s, rng);
        auto b = extract_latent(rng.normal_vector<double>(6), s, rng);
        CHECK(invert_generate(est, a, s) != invert_generate(est, b, s));
    }
    ZeroEstimator<double> wrong(7);
    auto a = extract_latent(rng.normal_vector<double>(6), s, rng);
    CHECK_THROWS_AS(invert_generate(wrong, a, s), LayoutError);
}
