#pragma once

#include <string>
#include <vector>

#include "pfedgpa/federation.hpp"
#include "pfedgpa/guidance.hpp"

namespace pfedgpa {

/// round,client_id,phase,accuracy,loss with fixed six-decimal values, so
/// equal runs give equal bytes.
std::string metrics_csv(const MetricsReport& report);
/// step,loss
std::string loss_csv(const std::vector<double>& trace);
/// client_id,round,accuracy,loss
std::string init_csv(const std::vector<std::pair<std::size_t, std::vector<InitRound>>>& traces);

struct RunManifest {
    std::string config_path;
    std::string resolved_config;
    std::uint64_t seed = 0;
    std::string output_dir;
    std::string config_hash;
};

RunManifest make_manifest(const std::string& config_path, const FederationConfig& cfg, const std::string& output_dir);
std::string manifest_json(const RunManifest& m);
std::string summary_json(const MetricsReport& report, const FederationConfig& cfg, const RunManifest& m);

/// Writes `text` to `path`, creating parent directories; throws on failure.
void write_text(const std::string& path, const std::string& text);

}  // namespace pfedgpa
