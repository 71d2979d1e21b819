#include <doctest.h>

#include "pfedgpa/config.hpp"
#include "pfedgpa/demos.hpp"
#include "pfedgpa/metrics.hpp"

using namespace pfedgpa;

TEST_CASE("git blob hash matches git hash-object") {
    // values from `git hash-object --stdin`
    CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("rendered config parses back to itself") {
    FederationConfig cfg;
    cfg.method = "fedavg-ft";
    cfg.partition.s_percent = 37.5;
    cfg.local.lr = 0.0123456789;
    cfg.inversion_sign = NoiseSign::Plus;
    cfg.normalize = false;
    cfg.guidance.delta_sign = "score";
    const auto text = render_config(cfg);
    CHECK(render_config(parse_config(text)) == text);
    CHECK(text.rfind("schema_version = 1\n", 0) == 0);
}

TEST_CASE("comments, blanks, dotted keys and later lines win") {
    auto cfg = parse_config(
        "# experiment\n"
        "schema_version = 1\n"
        "\n"
        "rounds = 7   # short\n"
        "partition.s_percent = 40\n"
        "partition.s_percent = 60\n"
        "guidance.omega=0.25\n");
    CHECK(cfg.rounds == 7);
    CHECK(cfg.partition.s_percent == 60.0);
    CHECK(cfg.guidance.omega == 0.25);
    apply_override(cfg, "rounds=9");
    apply_override(cfg, "rounds = 11");
    CHECK(cfg.rounds == 11);
}

TEST_CASE("config errors name the key and line") {
    try {
        parse_config("rounds = 3\nbogus.key = 1\n", "exp.cfg");
        FAIL("expected an error");
    } catch (const ConfigFileError& e) {
        CHECK(e.key() == "bogus.key");
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("exp.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("rounds = many\n"), ConfigFileError);
    CHECK_THROWS_AS(parse_config("rounds\n"), ConfigFileError);
    CHECK_THROWS_AS(parse_config("schema_version = 2\n"), ConfigFileError);
    CHECK_THROWS_AS(parse_config("normalize = maybe\n"), ConfigFileError);
    FederationConfig cfg;
    CHECK_THROWS_AS(apply_override(cfg, "nokey"), ConfigFileError);
    CHECK_THROWS_AS(apply_override(cfg, "x.y=1"), ConfigFileError);
}

TEST_CASE("manifest hash follows the resolved config") {
    FederationConfig a, b;
    b.seed = 2;
    auto ma = make_manifest("a.cfg", a, "out");
    CHECK(ma.config_hash == git_blob_hash(render_config(a)));
    CHECK(ma.config_hash != make_manifest("a.cfg", b, "out").config_hash);
    CHECK(manifest_json(ma).find(ma.config_hash) != std::string::npos);
}

TEST_CASE("metrics csv has fixed precision") {
    MetricsReport r;
    r.rows.push_back({1, 0, "beforeFT", 0.5, 1.0 / 3.0});
    CHECK(metrics_csv(r) == "round,client_id,phase,accuracy,loss\n1,0,beforeFT,0.500000,0.333333\n");
    CHECK(loss_csv({2.0}) == "step,loss\n1,2.000000\n");
}

TEST_CASE("shipped fixture config matches the acceptance fixture") {
    auto cfg = load_config(PFEDGPA_SOURCE_DIR "/configs/scaled-fixture.cfg");
    CHECK(render_config(cfg) == render_config(scaled_fixture_config(1)));
    CHECK_NOTHROW(load_config(PFEDGPA_SOURCE_DIR "/configs/quick.cfg").validate());
    CHECK_NOTHROW(load_config(PFEDGPA_SOURCE_DIR "/configs/paper-protocol.cfg").validate());
}
