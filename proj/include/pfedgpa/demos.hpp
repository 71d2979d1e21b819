#pragma once

#include <map>
#include <string>
#include <vector>

#include "pfedgpa/federation.hpp"

namespace pfedgpa {

struct DemoOptions {
    /// CSV output directory; empty writes nothing
    std::string out_dir;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::size_t workers = 1;
};

struct DemoResult {
    std::string name;
    bool pass = false;
    /// human-readable verdict details, one per line
    std::vector<std::string> lines;
    std::map<std::string, double> values;
};

double median(std::vector<double> v);

/// The desk-scale non-IID federation: 10 clients, 4 blob classes, 20% uniform
/// share, 600 samples each, mlp-tiny, diffusion_T = 100.
FederationConfig scaled_fixture_config(std::uint64_t seed);

/// One seed of the scaled fixture: the federation (with one held-out client
/// appended), every requested method's report and pFedGPA's final server.
struct FixtureRun {
    Federation fed;
    std::map<std::string, MetricsReport> reports;
    ServerSnapshot server;
};

FixtureRun run_scaled_fixture(const FederationConfig& cfg, const std::vector<std::string>& methods);

/// Held-out client joining the fixture's server: rounds to 95% of its
/// local-only plateau with and without guidance.
struct NewClientTrial {
    double plateau = 0.0;
    std::size_t rounds_guided = 0;
    std::size_t rounds_unguided = 0;
    std::vector<double> guided;
    std::vector<double> unguided;
};

NewClientTrial new_client_trial(const FixtureRun& run, std::size_t horizon = 30);

DemoResult demo_inversion_roundtrip(const DemoOptions& opt);
DemoResult demo_mixture_ddpm(const DemoOptions& opt);
DemoResult demo_collapse(const DemoOptions& opt);
DemoResult demo_new_client(const DemoOptions& opt);

std::vector<std::string> demo_names();
DemoResult run_demo(const std::string& name, const DemoOptions& opt);

}  // namespace pfedgpa
