#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "pfedgpa/config.hpp"
#include "pfedgpa/demos.hpp"
#include "pfedgpa/metrics.hpp"
#include "pfedgpa/snapshot.hpp"

using namespace pfedgpa;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFail = 1, kUsage = 2, kNumeric = 3 };

std::string output_root() {
    const char* env = std::getenv("PFEDGPA_OUTPUT_ROOT");
    return env && *env ? env : "runs";
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const FormatError& e) {
        std::cerr << "bad container: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
}

struct RunArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    int workers = -1;
};

int cmd_run(const RunArgs& a) {
    auto cfg = load_config(a.config);
    for (const auto& o : a.overrides) apply_override(cfg, o);
    if (a.workers >= 0) cfg.workers = static_cast<std::size_t>(a.workers);
    cfg.validate();
    if (cfg.new_clients > 0 && cfg.method != "pfedgpa") {
        throw ConfigError("new_clients: guided initialization needs method = pfedgpa");
    }

    auto manifest = make_manifest(a.config, cfg, "");
    const std::string out =
        !a.out.empty() ? a.out : output_root() + "/" + fs::path(a.config).stem().string() + "-" + manifest.config_hash.substr(0, 12);
    manifest.output_dir = out;
    write_text(out + "/manifest.json", manifest_json(manifest));

    Rng root(cfg.seed);
    Rng drng = root.child(1);
    auto pool = load_dataset(cfg.data, drng);
    auto fed = build_federation(cfg, pool, cfg.new_clients);
    const std::vector<ClientState> joining(fed.clients.begin() + static_cast<std::ptrdiff_t>(cfg.n_clients), fed.clients.end());

    RoundCallback on_round;
    if (cfg.checkpoint_every > 0) {
        on_round = [&](std::size_t r, const ServerSnapshot& s) {
            if (r % cfg.checkpoint_every != 0) return;
            char name[64];
            std::snprintf(name, sizeof name, "/checkpoints/round_%04zu.pgpa", r);
            fs::create_directories(out + "/checkpoints");
            server_checkpoint(s, cfg, r, manifest.config_hash).save(out + name);
        };
    }
    ServerSnapshot server;
    auto report = run_experiment(fed, &server, on_round);

    write_text(out + "/metrics.csv", metrics_csv(report));
    if (!report.diffusion_loss.empty()) write_text(out + "/diffusion_loss.csv", loss_csv(report.diffusion_loss));
    if (cfg.method == "pfedgpa") server_checkpoint(server, cfg, cfg.rounds, manifest.config_hash).save(out + "/server.pgpa");

    if (!joining.empty()) {
        if (!server.model.estimator) throw ConfigError("new_clients: the run never trained an estimator");
        std::vector<std::pair<std::size_t, std::vector<InitRound>>> traces;
        for (auto c : joining) {
            Rng grng = root.child(0x6e6577 + c.id);
            std::vector<InitRound> trace;
            initialize_new_client(server.model, c, cfg.guidance, cfg.local, grng, &trace);
            traces.emplace_back(c.id, std::move(trace));
        }
        write_text(out + "/new_clients.csv", init_csv(traces));
    }
    write_text(out + "/summary.json", summary_json(report, cfg, manifest));

    std::printf("%s: average accuracy %.4f (before FT %.4f, after FT %.4f) over %zu clients in %.1fs\n", cfg.method.c_str(),
                report.average_accuracy, report.average_before_ft, report.average_after_ft, report.final_accuracy.size(),
                report.wall_seconds);
    std::printf("outputs in %s\n", out.c_str());
    return kOk;
}

int cmd_demo(const std::string& name, const std::vector<std::uint64_t>& seeds, const std::string& out_flag, int workers) {
    DemoOptions opt;
    if (!seeds.empty()) opt.seeds = seeds;
    if (workers >= 0) opt.workers = static_cast<std::size_t>(workers);
    opt.out_dir = out_flag.empty() ? output_root() + "/demo-" + name : out_flag;
    auto res = run_demo(name, opt);
    for (const auto& l : res.lines) std::printf("%s\n", l.c_str());
    std::printf("%s %s (data in %s)\n", res.pass ? "PASS" : "FAIL", res.name.c_str(), opt.out_dir.c_str());
    return res.pass ? kOk : kFail;
}

int cmd_inspect(const std::string& path) {
    auto ck = Checkpoint::load(path);
    std::printf("%s\n%s", path.c_str(), describe_checkpoint(ck).c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pFedGPA federated-learning simulator"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "run an experiment from a config file");
    run_cmd->add_option("config", run.config, "config file (key = value lines)")->required();
    run_cmd->add_option("overrides", run.overrides, "dotted.key=value overrides, applied in order");
    run_cmd->add_option("--set", run.overrides, "another override (may repeat)");
    run_cmd->add_option("-o,--out", run.out, "output directory (default $PFEDGPA_OUTPUT_ROOT/<config>-<hash>)");
    run_cmd->add_option("-w,--workers", run.workers, "worker threads (0 = all cores)");

    std::string demo_name, demo_out;
    std::vector<std::uint64_t> seeds;
    int demo_workers = -1;
    auto* demo_cmd = app.add_subcommand("demo", "run a desk-scale demonstration and print PASS/FAIL");
    demo_cmd->add_option("name", demo_name, "collapse | inversion-roundtrip | mixture-ddpm | new-client")->required();
    demo_cmd->add_option("--seeds", seeds, "seeds (default 1 2 3 4 5)")->delimiter(',');
    demo_cmd->add_option("-o,--out", demo_out, "CSV output directory");
    demo_cmd->add_option("-w,--workers", demo_workers, "worker threads (0 = all cores)");

    std::string ck_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "describe a checkpoint container");
    inspect_cmd->add_option("checkpoint", ck_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    if (*run_cmd) return guarded([&] { return cmd_run(run); });
    if (*demo_cmd) return guarded([&] { return cmd_demo(demo_name, seeds, demo_out, demo_workers); });
    return guarded([&] { return cmd_inspect(ck_path); });
}
