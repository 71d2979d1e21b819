#include <doctest.h>

#include <cmath>

#include "pfedgpa/autoencoder.hpp"
#include "pfedgpa/diffusion.hpp"
#include "support/oracles.hpp"

using namespace pfedgpa;

namespace {

double rel_recon(const Autoencoder& ae, const std::vector<float>& v) {
    std::vector<double> x(v.begin(), v.end());
    Rng unused(0);
    return oracle::rel_error(ae.decode(ae.encode(x, unused)), x);
}

// 64 points on a 4-dim affine subspace of R^256
std::vector<std::vector<float>> low_rank_fixture(Rng& rng) {
    const std::size_t d = 256, k = 4;
    auto offset = rng.normal_vector<double>(d);
    std::vector<std::vector<double>> basis;
    for (std::size_t j = 0; j < k; ++j) basis.push_back(rng.normal_vector<double>(d));
    std::vector<std::vector<float>> out;
    for (int n = 0; n < 64; ++n) {
        std::vector<float> v(d);
        std::vector<double> c = rng.normal_vector<double>(k);
        for (std::size_t i = 0; i < d; ++i) {
            double s = offset[i];
            for (std::size_t j = 0; j < k; ++j) s += c[j] * basis[j][i];
            v[i] = static_cast<float>(s);
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

TEST_CASE("identity-initialized linear autoencoder reconstructs immediately") {
    Rng rng(1);
    std::vector<std::vector<float>> data;
    for (int i = 0; i < 8; ++i) data.push_back(rng.normal_vector<float>(12));
    AutoencoderConfig cfg;
    cfg.kind = "linear";
    cfg.latent_dim = 12;
    cfg.identity_init = true;
    cfg.steps = 5;
    cfg.batch_size = 4;
    cfg.lr = 1e-4;
    auto ae = train_autoencoder(data, cfg, rng);
    for (const auto& v : data) CHECK(rel_recon(ae, v) <= 1e-2);
}

TEST_CASE("conv autoencoder recovers a low-rank subspace") {
    Rng rng(2);
    auto data = low_rank_fixture(rng);
    AutoencoderConfig cfg;
    cfg.latent_dim = 8;
    cfg.steps = 600;
    cfg.batch_size = 32;
    cfg.lr = 3e-3;
    auto ae = train_autoencoder(data, cfg, rng);
    CHECK(ae.loss_trace().size() == 600);
    double worst = 0.0;
    for (const auto& v : data) worst = std::max(worst, rel_recon(ae, v));
    MESSAGE("worst relative reconstruction error " << worst);
    CHECK(worst <= 0.05);
}

TEST_CASE("zero augmentation tracks plain reconstruction training") {
    Rng data_rng(3);
    auto data = low_rank_fixture(data_rng);
    AutoencoderConfig plain;
    plain.latent_dim = 8;
    plain.steps = 50;
    plain.augment_sigma_input = 0.0;
    plain.augment_sigma_latent = 0.0;
    AutoencoderConfig aug = plain;
    aug.augment_sigma_input = 1e-3;
    aug.augment_sigma_latent = 1e-3;
    Rng a(4), b(4);
    auto ea = train_autoencoder(data, plain, a);
    auto eb = train_autoencoder(data, aug, b);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(ea.loss_trace()[i] == doctest::Approx(eb.loss_trace()[i]).epsilon(1e-2));
    }
}

TEST_CASE("encode determinism and augmentation") {
    Rng rng(5);
    AutoencoderConfig cfg;
    cfg.latent_dim = 4;
    Autoencoder ae(20, cfg, rng);
    auto v = rng.normal_vector<double>(20);
    Rng r1(1), r2(2);
    CHECK(ae.encode(v, r1) == ae.encode(v, r2));
    CHECK(ae.encode(v, r1, true) != ae.encode(v, r2, true));
    CHECK(ae.decode(ae.encode(v, r1)).size() == 20);
    CHECK_THROWS_AS(ae.encode(std::vector<double>(19), r1), LayoutError);
    CHECK_THROWS_AS(ae.decode(std::vector<double>(5)), LayoutError);
    cfg.latent_dim = 21;
    CHECK_THROWS_AS(Autoencoder(20, cfg, rng), ConfigError);
    CHECK_THROWS_AS(train_autoencoder({std::vector<float>(20)}, AutoencoderConfig{}, rng), LayoutError);
}
