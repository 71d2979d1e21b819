#include <doctest.h>

#include <cmath>

#include "pfedgpa/guidance.hpp"

using namespace pfedgpa;

namespace {

// eps(x, t) = x * t / 10, a fixed nontrivial estimator
class ScaleEstimator final : public NoiseEstimator<double> {
public:
    explicit ScaleEstimator(std::size_t d) : d_(d) {}
    std::size_t dim() const override { return d_; }
    std::vector<double> predict(std::span<const double> x, std::span<const std::size_t> steps) const override {
        std::vector<double> out(x.begin(), x.end());
        for (std::size_t n = 0; n < steps.size(); ++n)
            for (std::size_t i = 0; i < d_; ++i) out[n * d_ + i] *= static_cast<double>(steps[n]) / 10.0;
        return out;
    }

private:
    std::size_t d_;
};

struct Fixture {
    std::shared_ptr<const ClassifierModel> model;
    ClientState client;
    GenerativeModel g;
};

Fixture make_fixture(std::shared_ptr<const NoiseEstimator<double>> est = nullptr) {
    ModelSpec spec;
    spec.input_shape = {4};
    spec.n_classes = 3;
    spec.hidden = 6;
    auto model = std::make_shared<const ClassifierModel>(build_classifier(spec));
    BlobSpec b;
    b.n_classes = 3;
    b.dim = 4;
    b.per_class = 40;
    Rng rng(1);
    auto train = make_blobs(b, rng);
    auto test = make_blobs(b, rng);
    Rng init(2);
    auto params = init_params(model->layout(), init);
    Fixture f{model, make_client(0, train, test, model, params, Rng(3)), {}};
    const std::size_t d = model->layout().total();
    f.g.layout = model->layout();
    f.g.mask = LayerMask::all(model->layout());
    f.g.norm = identity_norm(d);
    f.g.estimator = est ? est : std::make_shared<ZeroEstimator<double>>(d);
    f.g.schedule = default_schedule(100);
    return f;
}

}  // namespace

TEST_CASE("guided_eps affine identities") {
    ScaleEstimator est(5);
    Rng rng(4);
    auto theta = rng.normal_vector<double>(5);
    auto d = rng.normal_vector<double>(5);
    auto base = est.predict_one(std::span<const double>(theta), 7);
    CHECK(guided_eps(est, theta, 7, d, -1.0) == base);
    std::vector<double> zero(5, 0.0);
    CHECK(guided_eps(est, theta, 7, zero, 0.5) == base);

    auto g1 = guided_eps(est, theta, 7, d, 0.5);
    std::vector<double> d3(5);
    for (int i = 0; i < 5; ++i) d3[i] = 3.0 * d[i];
    auto g3 = guided_eps(est, theta, 7, d3, 0.5);
    for (int i = 0; i < 5; ++i) {
        CHECK(g1[i] == doctest::Approx(base[i] - 1.5 * d[i]).epsilon(1e-14));
        CHECK(g3[i] - base[i] == doctest::Approx(3.0 * (g1[i] - base[i])).epsilon(1e-12));
    }
    auto gs = guided_eps(est, theta, 7, d, 0.5, 100.0);
    CHECK(gs[0] == doctest::Approx(base[0] - 150.0 * d[0]).epsilon(1e-12));
    CHECK_THROWS_AS(guided_eps(est, theta, 7, std::vector<double>(4, 0.0), 0.5), LayoutError);
}

TEST_CASE("zero init rounds is a single local update") {
    auto f = make_fixture();
    ClientState other = f.client;
    LocalUpdateConfig lcfg;
    lcfg.batch_size = 20;
    GuidanceConfig gcfg;
    gcfg.init_rounds = 0;
    Rng rng(5);
    std::vector<InitRound> trace;
    auto out = initialize_new_client(f.g, f.client, gcfg, lcfg, rng, &trace);
    auto expect = local_update(other, other.params, lcfg);
    CHECK(out == expect);
    CHECK(trace.size() == 1);
}

TEST_CASE("zero estimator with omega -1 rescales the diffused parameters") {
    auto f = make_fixture();
    const auto theta = f.client.params;
    LocalUpdateConfig lcfg;
    lcfg.lr = 0.0;  // local updates become the identity
    lcfg.batch_size = 20;
    GuidanceConfig gcfg;
    gcfg.omega = -1.0;
    gcfg.init_rounds = 1;
    gcfg.denoise_steps = 1;

    for (std::size_t start : {1u, 2u, 30u}) {
        gcfg.start_step = start;
        Rng rng(6);
        ClientState c = f.client;
        auto out = initialize_new_client(f.g, c, gcfg, lcfg, rng, nullptr);
        // hand computation: x = sqrt(abar_s) theta + sqrt(1 - abar_s) e, then x / sqrt(alpha_s) + sigma_s z
        const auto& s = f.g.schedule;
        Rng ref(6);
        auto e = ref.normal_vector<double>(theta.size());
        auto z = ref.normal_vector<double>(theta.size());
        const double ab = s.alpha_bars[start], a = 1.0 - s.betas[start];
        const double sig = start == 1 ? 0.0 : std::sqrt((1 - s.alpha_bars[start - 1]) / (1 - ab) * s.betas[start]);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double x = (std::sqrt(ab) * theta[i] + std::sqrt(1 - ab) * e[i]) / std::sqrt(a) + sig * z[i];
            CHECK(out[i] == doctest::Approx(x).epsilon(1e-6));
        }
    }
}

TEST_CASE("guided initialization is finite, deterministic and validated") {
    auto f = make_fixture();
    f.g.estimator = std::make_shared<ScaleEstimator>(f.model->layout().total());
    LocalUpdateConfig lcfg;
    lcfg.batch_size = 20;
    GuidanceConfig gcfg;
    gcfg.init_rounds = 3;
    gcfg.denoise_steps = 5;
    gcfg.start_step = 20;
    auto run = [&](std::vector<InitRound>* trace) {
        ClientState c = f.client;
        Rng rng(7);
        return initialize_new_client(f.g, c, gcfg, lcfg, rng, trace);
    };
    std::vector<InitRound> trace;
    auto a = run(&trace);
    auto b = run(nullptr);
    CHECK(a == b);
    CHECK(all_finite<float>(a));
    REQUIRE(trace.size() == 4);
    CHECK(trace.back().round == 4);

    gcfg.delta_scale = "per-lr";
    CHECK(all_finite<float>(run(nullptr)));
    gcfg.delta_scale = "raw";
    gcfg.delta_sign = "score";
    auto flipped = run(nullptr);
    CHECK(all_finite<float>(flipped));
    CHECK(flipped != a);
    gcfg.delta_sign = "sideways";
    CHECK_THROWS_AS(run(nullptr), ConfigError);
    gcfg.delta_sign = "algorithm";
    gcfg.start_step = 3;  // fewer than denoise_steps
    CHECK_THROWS_AS(run(nullptr), ConfigError);
    gcfg.start_step = 20;
    f.g.estimator = std::make_shared<ZeroEstimator<double>>(7);
    CHECK_THROWS_AS(run(nullptr), LayoutError);
    f.g.estimator = nullptr;
    CHECK_THROWS_AS(run(nullptr), ConfigError);
}
