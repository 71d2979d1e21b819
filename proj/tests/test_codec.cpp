#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pfedgpa/checkpoint.hpp"
#include "pfedgpa/layout.hpp"
#include "pfedgpa/rng.hpp"
#include "support/oracles.hpp"

using namespace pfedgpa;

namespace {

Layout three_layer() {
    return Layout({{"fc1.weight", {4, 3}}, {"fc1.bias", {4}}, {"fc2.weight", {2, 4}}, {"fc2.bias", {2}}});
}

}  // namespace

TEST_CASE("flatten places layers contiguously") {
    Layout layout({{"a", {2, 2}}, {"b", {3}}});
    CHECK(layout.total() == 7);
    CHECK(layout.entry("b").offset == 4);
    std::vector<Tensor<double>> w{Tensor<double>({2, 2}, {1, 2, 3, 4}), Tensor<double>({3}, {5, 6, 7})};
    auto v = flatten(w, layout);
    CHECK(v == std::vector<double>{1, 2, 3, 4, 5, 6, 7});
    auto back = unflatten<double>(v, layout);
    REQUIRE(back.size() == 2);
    CHECK(back[0].data == w[0].data);
    CHECK(back[1].data == w[1].data);
    CHECK(back[1].shape == Shape{3});

    std::vector<Tensor<double>> zeros{Tensor<double>({2, 2}), Tensor<double>({3})};
    for (double x : flatten(zeros, layout)) CHECK(x == 0.0);

    Layout single({{"only", {5}}});
    std::vector<float> one{1, 2, 3, 4, 5};
    CHECK(unflatten<float>(one, single)[0].data == one);

    CHECK_THROWS_AS(unflatten<double>(std::vector<double>(6), layout), LayoutError);
    std::vector<Tensor<double>> bad{Tensor<double>({4}), Tensor<double>({3})};
    CHECK_THROWS_AS(flatten(bad, layout), LayoutError);
}

TEST_CASE("split and merge by mask") {
    auto layout = three_layer();
    Rng rng(1);
    auto v = rng.normal_vector<float>(layout.total());

    auto all = split_by_mask<float>(v, layout, LayerMask::all(layout));
    CHECK(all.retained.empty());
    CHECK(all.generated == v);

    auto last = LayerMask::last(layout, 2);
    CHECK(last.generated() == std::vector<std::string>{"fc2.weight", "fc2.bias"});
    auto parts = split_by_mask<float>(v, layout, last);
    CHECK(parts.generated.size() == 10);
    CHECK(parts.generated.size() + parts.retained.size() == layout.total());
    CHECK(merge_by_mask<float>(parts.generated, parts.retained, layout, last) == v);

    // a non-suffix mask still round-trips
    LayerMask middle(layout, {"fc1.bias", "fc2.weight"});
    auto p2 = split_by_mask<float>(v, layout, middle);
    CHECK(merge_by_mask<float>(p2.generated, p2.retained, layout, middle) == v);

    CHECK_THROWS_AS(LayerMask(layout, {"fc3.weight"}), LayoutError);
    CHECK_THROWS_AS(LayerMask(layout, {}), LayoutError);
}

TEST_CASE("norm statistics") {
    SUBCASE("identical vectors collapse to zero") {
        std::vector<std::vector<double>> same(3, {1.0, -2.0});
        auto st = fit_norm(same);
        for (double s : st.std) CHECK(s == st.floor);
        for (double x : normalize<double>(same[0], st)) CHECK(x == 0.0);
    }
    SUBCASE("two-point statistics") {
        // values -1 and +1 per dimension: mean 0, population std 1
        std::vector<std::vector<double>> two{{-1.0, -1.0}, {1.0, 1.0}};
        auto st = fit_norm(two);
        CHECK(st.mean[0] == 0.0);
        CHECK(st.std[0] == 1.0);
        CHECK(normalize<double>(two[0], st) == std::vector<double>{-1.0, -1.0});

        std::vector<std::vector<double>> scaled{{-3.0, 1.0}, {3.0, 5.0}};
        auto s2 = fit_norm(scaled);
        CHECK(s2.mean[1] == 3.0);
        CHECK(s2.std[0] == 3.0);
        auto n = normalize<double>(scaled[1], s2);
        CHECK(n[0] == doctest::Approx(1.0));
        CHECK(n[1] == doctest::Approx(1.0));
    }
    SUBCASE("round trip and standardization") {
        Rng rng(2);
        std::vector<std::vector<double>> data;
        for (int i = 0; i < 50; ++i) {
            auto v = rng.normal_vector<double>(6);
            for (std::size_t k = 0; k < 6; ++k) v[k] = 3.0 * v[k] + static_cast<double>(k);
            data.push_back(v);
        }
        auto st = fit_norm(data);
        std::vector<std::vector<double>> normed;
        for (const auto& v : data) {
            auto n = normalize<double>(v, st);
            auto back = denormalize<double>(n, st);
            CHECK(oracle::rel_error(back, v) <= 1e-6);
            normed.push_back(n);
        }
        for (std::size_t k = 0; k < 6; ++k) {
            std::vector<double> col;
            for (const auto& n : normed) col.push_back(n[k]);
            CHECK(std::abs(oracle::mean(col)) <= 1e-9);
            CHECK(oracle::variance(col) * 49.0 / 50.0 == doctest::Approx(1.0));
        }
    }
    CHECK_THROWS_AS(fit_norm(std::vector<std::vector<double>>{{1.0}}), LayoutError);
}

TEST_CASE("checkpoint round trip") {
    auto layout = three_layer();
    Rng rng(3);
    Checkpoint cp;
    cp.put_layout("model", layout);
    auto vf = rng.normal_vector<float>(layout.total());
    auto vd = rng.normal_vector<double>(9);
    cp.put_values("estimator", vf);
    cp.put_values("extra", vd);
    cp.put_mask("generated", LayerMask::last(layout, 2));
    NormStats st{{1.0, 2.0}, {0.5, 1e-6}, 1e-6};
    cp.put_norm("server", st);
    auto sched = make_schedule(20, 1e-3, 0.05, ScheduleKind::Cosine);
    cp.put_schedule("diffusion", sched);
    auto code = extract_latent(rng.normal_vector<double>(3), sched, rng);
    cp.put_latent("client0", code);
    cp.put_meta("estimator.kind", "mlp");

    auto path = std::filesystem::temp_directory_path() / "pfedgpa_codec_test.pgpa";
    cp.save(path);
    auto back = Checkpoint::load(path);
    std::filesystem::remove(path);

    CHECK(back.layout("model") == layout);
    auto vals = back.values("estimator");
    CHECK(vals.width == 4);
    CHECK(vals.as_float() == vf);
    CHECK(back.values("extra").values == vd);
    CHECK(back.mask("generated", layout).generated() == LayerMask::last(layout, 2).generated());
    CHECK(back.norm("server").mean == st.mean);
    CHECK(back.norm("server").std == st.std);
    auto s2 = back.schedule("diffusion");
    CHECK(s2.hash() == sched.hash());
    CHECK(s2.kind == ScheduleKind::Cosine);
    CHECK(s2.alpha_bars == sched.alpha_bars);
    auto c2 = back.latent("client0");
    CHECK(c2.theta_T == code.theta_T);
    CHECK(c2.eps == code.eps);
    CHECK(reconstruct(c2, s2) == reconstruct(code, sched));
    CHECK(back.meta("estimator.kind") == "mlp");
    CHECK(back.serialize() == cp.serialize());
}

TEST_CASE("checkpoint rejects corrupt and newer containers") {
    Checkpoint cp;
    cp.put_values("v", std::vector<double>{1.0, 2.0});
    auto bytes = cp.serialize();

    auto newer = bytes;
    newer[4] = 2;
    CHECK_THROWS_AS(Checkpoint::deserialize(newer), FormatError);

    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(Checkpoint::deserialize(magic), FormatError);

    for (std::size_t cut : {3u, 10u, static_cast<unsigned>(bytes.size() - 1)}) {
        std::vector<std::uint8_t> shortened(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_THROWS_AS(Checkpoint::deserialize(shortened), FormatError);
    }
    // little-endian header: version 1 as bytes 01 00 00 00
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK_THROWS_AS(cp.values("missing"), FormatError);
}
