#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pfedgpa/client.hpp"
#include "support/oracles.hpp"

using namespace pfedgpa;

namespace {

std::shared_ptr<const ClassifierModel> tiny_model(std::size_t in = 4, int classes = 3, std::size_t hidden = 8) {
    ModelSpec spec;
    spec.input_shape = {in};
    spec.n_classes = classes;
    spec.hidden = hidden;
    return std::make_shared<const ClassifierModel>(build_classifier(spec));
}

ClientState blob_client(std::uint64_t seed, std::size_t per_class = 100) {
    BlobSpec b;
    b.n_classes = 3;
    b.dim = 4;
    b.per_class = per_class;
    Rng rng(seed);
    auto train = make_blobs(b, rng);
    auto test = make_blobs(b, rng);
    auto model = tiny_model();
    Rng init(seed + 1);
    auto params = init_params(model->layout(), init);
    return make_client(0, std::move(train), std::move(test), model, params, Rng(seed + 2));
}

}  // namespace

TEST_CASE("reference architectures") {
    ModelSpec mlp;
    CHECK(build_classifier(mlp).layout().total() == 32 * 32 + 32 + 4 * 32 + 4);
    ModelSpec small;
    small.arch = "cnn-small";
    small.input_shape = {1, 12, 12};
    small.n_classes = 10;
    auto m = build_classifier(small);
    CHECK(m.layout().find("conv2.weight").has_value());
    CHECK(m.layout().at(m.layout().size() - 1).name == "fc2.bias");
    ModelSpec med = small;
    med.arch = "cnn-med";
    CHECK(build_classifier(med).layout().find("conv3.weight").has_value());
    ModelSpec bad;
    bad.arch = "resnet";
    CHECK_THROWS_AS(build_classifier(bad), ConfigError);
}

TEST_CASE("lr = 0 returns init exactly") {
    auto c = blob_client(1);
    auto init = c.params;
    LocalUpdateConfig cfg;
    cfg.lr = 0.0;
    CHECK(local_update(c, init, cfg) == init);
}

TEST_CASE("a single example is memorized") {
    auto model = tiny_model();
    Dataset one;
    one.feature_shape = {4};
    one.n_classes = 3;
    std::vector<float> x{0.5f, -1.0f, 0.25f, 2.0f};
    one.push(x, 2);
    Rng init(3);
    auto c = make_client(7, one, one, model, init_params(model->layout(), init), Rng(4));
    LocalUpdateConfig cfg;
    cfg.epochs = 2000;
    cfg.lr = 0.1;
    auto theta = local_update(c, c.params, cfg);
    CHECK(c.last_epoch_losses.back() <= 0.01);
    CHECK(evaluate(c, theta).accuracy == 1.0);
    CHECK(c.params == theta);

    // the log-likelihood gradient vanishes with the loss
    cfg.epochs = 20000;
    theta = local_update(c, theta, cfg);
    auto batch = one.batch<double>();
    std::vector<double> td(theta.begin(), theta.end());
    const double loss = loss_value<double>(model->record, td, batch);
    auto g = loss_gradient<double>(c, td, batch);
    double norm = 0.0;
    for (double v : g) norm += v * v;
    CHECK(loss <= 1e-4);
    CHECK(std::sqrt(norm) <= 1e-3);
}

TEST_CASE("identical clients train identically") {
    auto a = blob_client(5);
    auto b = blob_client(5);
    LocalUpdateConfig cfg;
    CHECK(local_update(a, a.params, cfg) == local_update(b, b.params, cfg));
}

TEST_CASE("epoch loss does not increase on blobs") {
    auto c = blob_client(6, 300);
    LocalUpdateConfig cfg;
    cfg.epochs = 5;
    local_update(c, c.params, cfg);
    CHECK(c.last_epoch_losses.back() <= c.last_epoch_losses.front());
}

TEST_CASE("constant model scores chance on a balanced set") {
    auto model = tiny_model(4, 10, 8);
    Dataset test;
    test.feature_shape = {4};
    test.n_classes = 10;
    Rng rng(7);
    for (int k = 0; k < 10; ++k) {
        for (int j = 0; j < 30; ++j) test.push(rng.normal_vector<float>(4), k);
    }
    // all weights zero, bias favouring class 3
    std::vector<float> p(model->layout().total(), 0.0f);
    p[model->layout().entry("fc2.bias").offset + 3] = 1.0f;
    auto r = evaluate(*model, test, p);
    CHECK(r.accuracy == 30.0 / 300.0);
}

TEST_CASE("accuracy ignores test order") {
    auto c = blob_client(8);
    LocalUpdateConfig cfg;
    auto theta = local_update(c, c.params, cfg);
    auto before = evaluate(c, theta);
    std::vector<std::size_t> idx(c.test.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(9);
    rng.shuffle(idx.begin(), idx.end());
    auto shuffled = c.test.subset(idx);
    auto after = evaluate(*c.model, shuffled, theta);
    CHECK(after.accuracy == before.accuracy);
    CHECK(after.mean_loss == doctest::Approx(before.mean_loss).epsilon(1e-6));
}

TEST_CASE("loss_gradient is the negated cross-entropy gradient") {
    auto c = blob_client(10, 5);
    auto batch = c.train.batch<double>();
    std::vector<double> p(c.params.begin(), c.params.end());
    auto lg = value_and_grad<double>(c.model->record, p, batch);
    auto g = loss_gradient<double>(c, p, batch);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == -lg.grads[k]);
    auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& q) { return -loss_value<double>(c.model->record, q, batch); }, p);
    CHECK(p.size() <= 200);
    CHECK(oracle::rel_error(g, fd) <= 1e-4);
}

TEST_CASE("client error paths") {
    auto c = blob_client(11);
    LocalUpdateConfig cfg;
    CHECK_THROWS_AS(local_update(c, std::vector<float>(3), cfg), LayoutError);
    Dataset empty;
    empty.feature_shape = {4};
    empty.n_classes = 3;
    auto e = make_client(1, empty, empty, c.model, c.params, Rng(1));
    CHECK_THROWS_AS(local_update(e, e.params, cfg), LayoutError);
    CHECK_THROWS_AS(evaluate(e, e.params), LayoutError);
    Dataset other = c.test;
    other.n_classes = 5;
    CHECK_THROWS_AS(make_client(2, c.train, other, c.model, c.params, Rng(1)), LayoutError);

    std::vector<float> bad = c.params;
    bad[0] = std::numeric_limits<float>::infinity();
    try {
        local_update(c, bad, cfg);
        FAIL("expected a numeric error");
    } catch (const NumericError& err) {
        CHECK(std::string(err.what()).find("client 0") != std::string::npos);
        CHECK(std::string(err.what()).find("batch 0") != std::string::npos);
    }
}

TEST_CASE("csv loader") {
    auto path = std::filesystem::temp_directory_path() / "pfedgpa_client_test.csv";
    {
        std::ofstream out(path);
        out << "label,a,b\n1,0.5,1.5\n0,-1,2\n2,3,4\n";
    }
    auto d = load_csv(path.string());
    std::filesystem::remove(path);
    CHECK(d.size() == 3);
    CHECK(d.n_classes == 3);
    CHECK(d.labels == std::vector<int>{1, 0, 2});
    CHECK(d.example(1)[1] == 2.0f);
}
