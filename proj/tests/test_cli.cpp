#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kCli = PFEDGPA_CLI;
const std::string kConfigs = PFEDGPA_SOURCE_DIR "/configs";

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("pfedgpa_cli_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

int run(const std::string& args, const fs::path& log) {
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("run writes manifest, metrics and summary") {
    auto out = scratch("quick");
    REQUIRE(run("run " + kConfigs + "/quick.cfg -o " + out.string(), out.string() + ".log") == 0);
    for (const char* f : {"manifest.json", "metrics.csv", "summary.json"}) CHECK(fs::exists(out / f));
    auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    // four clients, 80% of each client's data from one blob class
    const double acc = summary["average_accuracy"].get<double>();
    CHECK(acc >= 0.6);
    CHECK(acc <= 1.0);
    auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["config_hash"] == summary["config_hash"]);
    CHECK(manifest["seed"] == 1);
}

TEST_CASE("same config and seed give byte-identical metrics") {
    auto a = scratch("det_a"), b = scratch("det_b");
    REQUIRE(run("run " + kConfigs + "/quick.cfg -o " + a.string(), a.string() + ".log") == 0);
    REQUIRE(run("run " + kConfigs + "/quick.cfg -o " + b.string(), b.string() + ".log") == 0);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
}

TEST_CASE("config problems exit 2 and name the key") {
    auto out = scratch("badkey");
    const fs::path cfg = out.string() + ".cfg";
    std::ofstream(cfg) << "rounds = 2\nnot_a_key = 3\n";
    const fs::path log = out.string() + ".log";
    CHECK(run("run " + cfg.string() + " -o " + out.string(), log) == 2);
    auto text = slurp(log);
    CHECK(text.find("not_a_key") != std::string::npos);
    CHECK(text.find(":2") != std::string::npos);
    CHECK(run("run " + kConfigs + "/quick.cfg partition.bogus=1 -o " + out.string(), log) == 2);
    CHECK(slurp(log).find("partition.bogus") != std::string::npos);
    CHECK(run("demo not-a-demo", log) == 2);
    CHECK(run("", log) == 2);
}

TEST_CASE("numeric abort exits 3 after the manifest is written") {
    auto out = scratch("diverge");
    CHECK(run("run " + kConfigs + "/quick.cfg local.lr=1e30 -o " + out.string(), out.string() + ".log") == 3);
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(!fs::exists(out / "metrics.csv"));
}

TEST_CASE("demo prints a verdict") {
    auto out = scratch("demo");
    const fs::path log = out.string() + ".log";
    CHECK(run("demo inversion-roundtrip --seeds 3 -o " + out.string(), log) == 0);
    CHECK(slurp(log).find("PASS") != std::string::npos);
    CHECK(fs::exists(out / "inversion_roundtrip.csv"));
}

TEST_CASE("inspect reads server checkpoints and rejects garbage") {
    auto out = scratch("inspect");
    const fs::path log = out.string() + ".log";
    REQUIRE(run("run " + kConfigs + "/quick.cfg method=pfedgpa rounds=7 window=2 diffusion.steps=10 estimator.width=16 "
                "estimator.depth=1 checkpoint_every=6 -o " + out.string(),
                log) == 0);
    CHECK(fs::exists(out / "checkpoints" / "round_0006.pgpa"));
    CHECK(run("inspect " + (out / "server.pgpa").string(), log) == 0);
    auto text = slurp(log);
    CHECK(text.find("fc2.weight") != std::string::npos);
    CHECK(text.find("NORM") != std::string::npos);
    const fs::path bad = out / "bad.pgpa";
    std::ofstream(bad) << "garbage";
    CHECK(run("inspect " + bad.string(), log) == 2);
}
