#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfedgpa/autoencoder.hpp"
#include "pfedgpa/client.hpp"
#include "pfedgpa/data.hpp"
#include "pfedgpa/diffusion.hpp"
#include "pfedgpa/generative.hpp"
#include "pfedgpa/guidance.hpp"

namespace pfedgpa {

struct PartitionSpec {
    /// share of each client's data drawn uniformly from the whole pool
    double s_percent = 20.0;
    std::size_t dominant_classes_per_client = 1;
    std::size_t samples_per_client = 600;
    std::size_t test_samples = 200;
    /// 0 picks ceil(n_classes / dominant_classes_per_client)
    std::size_t n_groups = 0;
};

struct ClientSplit {
    Dataset train;
    Dataset test;
    std::size_t group = 0;
    std::vector<int> dominant;
};

/// Client i belongs to group i mod n_groups; group g's dominant classes are
/// the consecutive classes g*k, g*k+1, ... (mod n_classes) for k dominant
/// classes per client. Train and test are disjoint within a client.
std::vector<ClientSplit> partition_non_iid(const Dataset& pool, const PartitionSpec& spec, std::size_t n_clients,
                                           Rng& rng);

/// sum_i (m_i / N) theta_i
std::vector<float> fedavg_aggregate(const std::vector<std::vector<float>>& params, std::span<const double> weights);

struct DatasetConfig {
    /// "blobs", "idx" or "csv"
    std::string kind = "blobs";
    BlobSpec blobs;
    std::string images;
    std::string labels;
    std::string csv;
};

struct FederationConfig {
    std::size_t n_clients = 10;
    std::size_t rounds = 30;
    double participation = 1.0;
    std::size_t window = 20;
    std::string method = "pfedgpa";
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    /// held-out clients that join after the run through guided initialization
    std::size_t new_clients = 0;

    DatasetConfig data;
    PartitionSpec partition;
    ModelSpec model;
    LocalUpdateConfig local;

    // server side
    std::size_t diffusion_T = 100;
    std::string schedule = "linear";
    /// 0 means the default linear range rescaled to diffusion_T
    double beta_start = 0.0;
    double beta_end = 0.0;
    EstimatorConfig estimator;
    DiffusionTrainConfig diffusion;
    /// "every-round" or "final-round"
    std::string generation = "every-round";
    /// "continuous" (train every round after warm-up) or "final-window" (train once, in the final round)
    std::string training = "continuous";
    /// optimizer steps for final-window training
    std::size_t final_train_steps = 2000;
    /// "inversion", "unconditional" or "passthrough"
    std::string generator = "inversion";
    NoiseSign inversion_sign = NoiseSign::Minus;
    /// "all", "last:N" or a comma-separated list of layer names
    std::string generated_layers = "all";
    bool normalize = true;
    /// "auto" (on above 4096 dims), "on" or "off"
    std::string ae = "auto";
    AutoencoderConfig ae_cfg;
    /// also evaluate one unconditional sample per client whenever generating
    bool record_unconditional = true;
    std::size_t checkpoint_every = 0;

    GuidanceConfig guidance;

    std::size_t warmup_rounds() const noexcept { return std::max<std::size_t>(5, window); }
    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct MetricRow {
    std::size_t round = 0;
    std::size_t client = 0;
    std::string phase;  // beforeFT or afterFT
    double accuracy = 0.0;
    double loss = 0.0;
};

struct MetricsReport {
    std::vector<MetricRow> rows;
    /// final-round per-client accuracy under the method's reporting phase
    std::vector<double> final_accuracy;
    std::vector<double> final_before_ft;
    std::vector<double> final_after_ft;
    /// before-FT accuracy of one unconditional sample per client, when recorded
    std::vector<double> final_unconditional;
    double average_accuracy = 0.0;
    double average_before_ft = 0.0;
    double average_after_ft = 0.0;
    double average_unconditional = -1.0;
    std::vector<double> diffusion_loss;
    /// every client's parameters after the last round
    std::vector<std::vector<float>> final_params;
    double wall_seconds = 0.0;
};

/// One uploaded generated-layer vector.
struct WindowEntry {
    std::size_t round = 0;
    std::size_t client = 0;
    std::vector<float> vec;
};

/// The server's rolling training window over the last W rounds.
class ParameterWindow {
public:
    explicit ParameterWindow(std::size_t rounds) : rounds_(rounds) {}
    void push(std::size_t round, std::size_t client, std::vector<float> vec);
    std::size_t rounds_held() const;
    const std::deque<WindowEntry>& entries() const noexcept { return entries_; }
    std::vector<std::vector<float>> vectors() const;

private:
    std::size_t rounds_;
    std::deque<WindowEntry> entries_;
};

/// Everything run_experiment needs besides the config; built once so
/// several methods can share identical data and initial parameters.
struct Federation {
    FederationConfig cfg;
    std::shared_ptr<const ClassifierModel> model;
    std::vector<ClientState> clients;
    std::vector<float> init;
    LayerMask mask;
};

Dataset load_dataset(const DatasetConfig& cfg, Rng& rng);
LayerMask parse_layer_mask(const std::string& spec, const Layout& layout);
NoiseSchedule make_server_schedule(const FederationConfig& cfg);

/// Partitions `pool`, builds the model and common initialization. Clients
/// 0..n_clients-1 are the federation; `extra_clients` more are held out.
Federation build_federation(const FederationConfig& cfg, const Dataset& pool, std::size_t extra_clients = 0);

struct ServerSnapshot {
    GenerativeModel model;
    std::shared_ptr<NetEstimator> estimator;
    ParameterWindow window{1};
    std::vector<float> global;
};

using RoundCallback = std::function<void(std::size_t round, const ServerSnapshot&)>;

/// Runs cfg.rounds rounds of cfg.method over the federation's clients
/// (clients beyond cfg.n_clients are ignored). `server_out` receives the
/// final server state.
MetricsReport run_experiment(Federation fed, ServerSnapshot* server_out = nullptr, const RoundCallback& on_round = {});

}  // namespace pfedgpa
