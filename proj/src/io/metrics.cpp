#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pfedgpa/config.hpp"
#include "pfedgpa/metrics.hpp"

namespace pfedgpa {

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string metrics_csv(const MetricsReport& report) {
    std::string out = "round,client_id,phase,accuracy,loss\n";
    for (const auto& r : report.rows) {
        out += std::to_string(r.round) + "," + std::to_string(r.client) + "," + r.phase + "," + fixed6(r.accuracy) + "," +
               fixed6(r.loss) + "\n";
    }
    return out;
}

std::string loss_csv(const std::vector<double>& trace) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out += std::to_string(i + 1) + "," + fixed6(trace[i]) + "\n";
    return out;
}

std::string init_csv(const std::vector<std::pair<std::size_t, std::vector<InitRound>>>& traces) {
    std::string out = "client_id,round,accuracy,loss\n";
    for (const auto& [client, trace] : traces) {
        for (const auto& r : trace) {
            out += std::to_string(client) + "," + std::to_string(r.round) + "," + fixed6(r.accuracy) + "," +
                   fixed6(r.loss) + "\n";
        }
    }
    return out;
}

RunManifest make_manifest(const std::string& config_path, const FederationConfig& cfg, const std::string& output_dir) {
    RunManifest m;
    m.config_path = config_path;
    m.resolved_config = render_config(cfg);
    m.seed = cfg.seed;
    m.output_dir = output_dir;
    m.config_hash = git_blob_hash(m.resolved_config);
    return m;
}

std::string manifest_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["config_path"] = m.config_path;
    j["config_hash"] = m.config_hash;
    j["seed"] = m.seed;
    j["output_dir"] = m.output_dir;
    j["resolved_config"] = m.resolved_config;
    return j.dump(2) + "\n";
}

std::string summary_json(const MetricsReport& report, const FederationConfig& cfg, const RunManifest& m) {
    nlohmann::ordered_json j;
    j["method"] = cfg.method;
    j["seed"] = cfg.seed;
    j["config_hash"] = m.config_hash;
    j["rounds"] = cfg.rounds;
    j["average_accuracy"] = report.average_accuracy;
    j["average_before_ft"] = report.average_before_ft;
    j["average_after_ft"] = report.average_after_ft;
    if (report.average_unconditional >= 0.0) j["average_unconditional_before_ft"] = report.average_unconditional;
    j["final_accuracy"] = report.final_accuracy;
    j["final_before_ft"] = report.final_before_ft;
    j["final_after_ft"] = report.final_after_ft;
    if (!report.final_unconditional.empty()) j["final_unconditional_before_ft"] = report.final_unconditional;
    if (!report.diffusion_loss.empty()) j["diffusion_final_loss"] = report.diffusion_loss.back();
    j["wall_seconds"] = report.wall_seconds;
    return j.dump(2) + "\n";
}

void write_text(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace pfedgpa
