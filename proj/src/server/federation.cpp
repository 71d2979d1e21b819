#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "pfedgpa/federation.hpp"
#include "pfedgpa/parallel.hpp"

namespace pfedgpa {

namespace {

// Stream ids under the run's root seed.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kPartitionStream = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kSamplerStream = 4;
constexpr std::uint64_t kServerStream = 5;
constexpr std::uint64_t kClientStream = 100;
constexpr std::uint64_t kGenerateStream = 1'000'000;

std::uint64_t generation_stream(std::size_t round, std::size_t client, std::size_t which) {
    return kGenerateStream + (round * 100'000 + client) * 4 + which;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void take(std::vector<std::size_t>& from, std::size_t k, std::vector<std::size_t>& into, std::set<std::size_t>& used,
          const std::string& what) {
    std::size_t got = 0;
    for (std::size_t idx : from) {
        if (got == k) break;
        if (used.insert(idx).second) {
            into.push_back(idx);
            ++got;
        }
    }
    if (got < k) {
        throw ConfigError("insufficient pool: " + what + " needs " + std::to_string(k) + " more examples than available");
    }
}

}  // namespace

std::vector<ClientSplit> partition_non_iid(const Dataset& pool, const PartitionSpec& spec, std::size_t n_clients,
                                           Rng& rng) {
    if (spec.s_percent < 0.0 || spec.s_percent > 100.0) throw ConfigError("partition.s_percent must lie in [0, 100]");
    const auto K = static_cast<std::size_t>(pool.n_classes);
    const std::size_t dpc = spec.dominant_classes_per_client;
    if (dpc == 0 || dpc > K) throw ConfigError("partition.dominant_classes_per_client must lie in [1, n_classes]");
    const std::size_t groups = spec.n_groups ? spec.n_groups : (K + dpc - 1) / dpc;
    if (spec.samples_per_client + spec.test_samples > pool.size()) {
        throw ConfigError("insufficient pool: " + std::to_string(pool.size()) + " examples for " +
                          std::to_string(spec.samples_per_client + spec.test_samples) + " per client");
    }
    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < pool.size(); ++i) by_class[static_cast<std::size_t>(pool.labels[i])].push_back(i);

    std::vector<ClientSplit> out(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        Rng r = rng.child(c);
        auto& split = out[c];
        split.group = c % groups;
        for (std::size_t j = 0; j < dpc; ++j) split.dominant.push_back(static_cast<int>((split.group * dpc + j) % K));

        std::set<std::size_t> used;
        auto draw = [&](std::size_t m, const std::string& part) {
            const auto uniform = static_cast<std::size_t>(std::llround(spec.s_percent / 100.0 * static_cast<double>(m)));
            const std::size_t dom = m - uniform;
            std::vector<std::size_t> idx;
            for (std::size_t j = 0; j < dpc; ++j) {
                const std::size_t want = dom / dpc + (j < dom % dpc ? 1 : 0);
                auto cls = by_class[static_cast<std::size_t>(split.dominant[j])];
                r.shuffle(cls.begin(), cls.end());
                take(cls, want, idx, used, "client " + std::to_string(c) + " " + part + " class " + std::to_string(split.dominant[j]));
            }
            std::vector<std::size_t> all(pool.size());
            std::iota(all.begin(), all.end(), std::size_t{0});
            r.shuffle(all.begin(), all.end());
            take(all, uniform, idx, used, "client " + std::to_string(c) + " " + part + " uniform share");
            return pool.subset(idx);
        };
        split.train = draw(spec.samples_per_client, "train");
        split.test = draw(spec.test_samples, "test");
    }
    return out;
}

std::vector<float> fedavg_aggregate(const std::vector<std::vector<float>>& params, std::span<const double> weights) {
    if (params.empty()) throw LayoutError("fedavg_aggregate: no parameter vectors");
    if (weights.size() != params.size()) throw LayoutError("fedavg_aggregate: one weight per vector is required");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw LayoutError("fedavg_aggregate: weights must be positive");
        total += w;
    }
    const std::size_t d = params.front().size();
    std::vector<double> acc(d, 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != d) throw LayoutError("fedavg_aggregate: vectors differ in length");
        const double w = weights[i] / total;
        for (std::size_t k = 0; k < d; ++k) acc[k] += w * static_cast<double>(params[i][k]);
    }
    return {acc.begin(), acc.end()};
}

void ParameterWindow::push(std::size_t round, std::size_t client, std::vector<float> vec) {
    if (!entries_.empty() && entries_.front().vec.size() != vec.size()) {
        throw LayoutError("window vectors must share the generated-layer dimension");
    }
    entries_.push_back({round, client, std::move(vec)});
    while (entries_.front().round + rounds_ <= round) entries_.pop_front();
}

std::size_t ParameterWindow::rounds_held() const {
    std::set<std::size_t> r;
    for (const auto& e : entries_) r.insert(e.round);
    return r.size();
}

std::vector<std::vector<float>> ParameterWindow::vectors() const {
    std::vector<std::vector<float>> v;
    v.reserve(entries_.size());
    for (const auto& e : entries_) v.push_back(e.vec);
    return v;
}

void FederationConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
    static const std::set<std::string> methods{"local-only", "fedavg", "fedavg-ft", "pfedgpa"};
    if (!methods.count(method)) fail("method", "expected local-only, fedavg, fedavg-ft or pfedgpa, got '" + method + "'");
    if (n_clients == 0) fail("n_clients", "must be positive");
    if (rounds == 0) fail("rounds", "must be positive");
    if (!(participation > 0.0 && participation <= 1.0)) fail("participation", "must lie in (0, 1]");
    if (window == 0) fail("window", "must be at least 1");
    if (partition.s_percent < 0.0 || partition.s_percent > 100.0) fail("partition.s_percent", "must lie in [0, 100]");
    if (partition.samples_per_client < local.batch_size) {
        fail("partition.samples_per_client", "must be at least local.batch_size");
    }
    if (partition.test_samples == 0) fail("partition.test_samples", "must be positive");
    if (local.epochs == 0) fail("local.epochs", "must be positive");
    if (local.batch_size == 0) fail("local.batch_size", "must be positive");
    if (!(local.lr >= 0.0)) fail("local.lr", "must be non-negative");
    if (diffusion_T == 0) fail("diffusion_T", "must be positive");
    if (generation != "every-round" && generation != "final-round") fail("generation", "expected every-round or final-round");
    if (training != "continuous" && training != "final-window") fail("training", "expected continuous or final-window");
    if (generator != "inversion" && generator != "unconditional" && generator != "passthrough") {
        fail("generator", "expected inversion, unconditional or passthrough");
    }
    if (ae != "auto" && ae != "on" && ae != "off") fail("ae", "expected auto, on or off");
    if (guidance.omega < -1.0) fail("guidance.omega", "must be >= -1");
    if (guidance.init_rounds == 0) fail("guidance.init_rounds", "must be at least 1");
    if (guidance.denoise_steps == 0 || guidance.denoise_steps > diffusion_T) {
        fail("guidance.denoise_steps", "must lie in [1, diffusion_T]");
    }
    if (guidance.resolved_start() < guidance.denoise_steps || guidance.resolved_start() > diffusion_T) {
        fail("guidance.start_step", "must lie in [denoise_steps, diffusion_T]");
    }
    if (guidance.delta_scale != "raw" && guidance.delta_scale != "per-lr") fail("guidance.delta_scale", "expected raw or per-lr");
    if (guidance.delta_sign != "algorithm" && guidance.delta_sign != "score") {
        fail("guidance.delta_sign", "expected algorithm or score");
    }
    parse_schedule_kind(schedule);
}

Dataset load_dataset(const DatasetConfig& cfg, Rng& rng) {
    if (cfg.kind == "blobs") return make_blobs(cfg.blobs, rng);
    if (cfg.kind == "idx") return load_idx(cfg.images, cfg.labels);
    if (cfg.kind == "csv") return load_csv(cfg.csv);
    throw ConfigError("data.kind: expected blobs, idx or csv, got '" + cfg.kind + "'");
}

LayerMask parse_layer_mask(const std::string& spec, const Layout& layout) {
    if (spec == "all") return LayerMask::all(layout);
    if (spec.rfind("last:", 0) == 0) return LayerMask::last(layout, std::stoul(spec.substr(5)));
    std::vector<std::string> names;
    std::stringstream ss(spec);
    for (std::string name; std::getline(ss, name, ',');) {
        if (!name.empty()) names.push_back(name);
    }
    return LayerMask(layout, names);
}

NoiseSchedule make_server_schedule(const FederationConfig& cfg) {
    auto base = default_schedule(cfg.diffusion_T);
    const double bs = cfg.beta_start > 0.0 ? cfg.beta_start : base.beta_start;
    const double be = cfg.beta_end > 0.0 ? cfg.beta_end : base.beta_end;
    return make_schedule(cfg.diffusion_T, bs, be, parse_schedule_kind(cfg.schedule));
}

Federation build_federation(const FederationConfig& cfg, const Dataset& pool, std::size_t extra_clients) {
    cfg.validate();
    Rng root(cfg.seed);
    Federation fed;
    fed.cfg = cfg;
    Rng prng = root.child(kPartitionStream);
    auto splits = partition_non_iid(pool, cfg.partition, cfg.n_clients + extra_clients, prng);
    ModelSpec spec = cfg.model;
    spec.input_shape = pool.feature_shape;
    spec.n_classes = pool.n_classes;
    fed.cfg.model = spec;
    fed.model = std::make_shared<const ClassifierModel>(build_classifier(spec));
    Rng irng = root.child(kInitStream);
    fed.init = init_params(fed.model->layout(), irng);
    for (std::size_t i = 0; i < splits.size(); ++i) {
        fed.clients.push_back(make_client(i, std::move(splits[i].train), std::move(splits[i].test), fed.model, fed.init,
                                          root.child(kClientStream + i)));
    }
    fed.mask = parse_layer_mask(cfg.generated_layers, fed.model->layout());
    return fed;
}

MetricsReport run_experiment(Federation fed, ServerSnapshot* server_out, const RoundCallback& on_round) {
    const auto t0 = std::chrono::steady_clock::now();
    const FederationConfig& cfg = fed.cfg;
    cfg.validate();
    if (fed.clients.size() < cfg.n_clients) throw ConfigError("federation has fewer clients than n_clients");
    fed.clients.resize(cfg.n_clients);
    const std::size_t n = cfg.n_clients;
    const Layout& layout = fed.model->layout();

    Rng root(cfg.seed);
    Rng sampler = root.child(kSamplerStream);
    Rng server_rng = root.child(kServerStream);

    const bool pf = cfg.method == "pfedgpa";
    const bool passthrough = pf && cfg.generator == "passthrough";
    const std::size_t warmup = cfg.warmup_rounds();
    const std::size_t gen_dim = fed.mask.generated_length(layout);
    const bool use_ae = cfg.ae == "on" || (cfg.ae == "auto" && gen_dim > 4096);

    ServerSnapshot server;
    server.window = ParameterWindow(cfg.window);
    server.global = fed.init;
    server.model.layout = layout;
    server.model.mask = fed.mask;
    server.model.schedule = make_server_schedule(cfg);
    server.model.norm = identity_norm(gen_dim);

    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) weights[i] = static_cast<double>(fed.clients[i].sample_count());

    MetricsReport report;
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.participation * static_cast<double>(n) - 1e-9)));

    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        std::vector<std::size_t> part(n);
        std::iota(part.begin(), part.end(), std::size_t{0});
        if (k < n) {
            sampler.shuffle(part.begin(), part.end());
            part.resize(k);
            std::sort(part.begin(), part.end());
        }
        const bool final_round = r == cfg.rounds;
        const bool have_corpus = server.window.entries().size() >= 2;
        const bool generate_now = pf && !passthrough && have_corpus &&
                                  (cfg.generation == "final-round" ? final_round : r > warmup);
        const bool continuous = cfg.training == "continuous";
        const bool train_now = pf && !passthrough && have_corpus && (continuous ? (r > warmup || generate_now) : generate_now);

        if (train_now) {
            auto raw = server.window.vectors();
            server.model.norm = cfg.normalize ? fit_norm(raw) : identity_norm(gen_dim);
            std::vector<std::vector<float>> data;
            data.reserve(raw.size());
            for (const auto& v : raw) data.push_back(normalize<float>(v, server.model.norm));
            if (use_ae) {
                AutoencoderConfig ac = cfg.ae_cfg;
                ac.workers = cfg.workers;
                auto ae = std::make_shared<Autoencoder>(train_autoencoder(data, ac, server_rng));
                for (auto& v : data) {
                    std::vector<double> d(v.begin(), v.end());
                    auto z = ae->encode(d, server_rng, true);
                    v.assign(z.begin(), z.end());
                }
                server.model.ae = ae;
            }
            DiffusionTrainConfig dc = cfg.diffusion;
            dc.workers = cfg.workers;
            if (!continuous) dc.steps = cfg.final_train_steps;
            if (!server.estimator || !continuous || server.estimator->dim() != data.front().size()) {
                Rng init = server_rng.child(r);
                server.estimator = std::make_shared<NetEstimator>(data.front().size(), cfg.estimator, init);
            }
            try {
                train_steps(*server.estimator, data, dc, server.model.schedule, server_rng);
            } catch (const NumericError& e) {
                throw DivergenceError("round " + std::to_string(r) + ": " + e.what(), e.index());
            }
            server.model.estimator = server.estimator;
        }

        // dispatch, evaluate before FT, local update, evaluate after FT
        struct Slot {
            EvalResult before, after, uncond;
            bool has_uncond = false;
        };
        std::vector<Slot> slots(part.size());
        const bool record_uncond = generate_now && final_round && cfg.record_unconditional && cfg.generator == "inversion";
        const GenerativeModel& gm = server.model;
        parallel_for(part.size(), cfg.workers, [&](std::size_t j) {
            const std::size_t i = part[j];
            ClientState& c = fed.clients[i];
            std::vector<float> init;
            if (cfg.method == "local-only" || passthrough) {
                init = c.params;
            } else if (generate_now) {
                Rng g = root.child(generation_stream(r, i, 0));
                if (cfg.generator == "inversion") {
                    GenerateOptions opt;
                    opt.invert.sign = cfg.inversion_sign;
                    init = generate_personalized(gm, c.params, g, opt);
                } else {
                    init = generate_unconditional(gm, c.params, g);
                }
                if (!all_finite<float>(init)) {
                    throw NumericError("round " + std::to_string(r) + ", client " + std::to_string(i) +
                                           ": generated parameters are not finite",
                                       r);
                }
            } else {
                init = server.global;
            }
            if (record_uncond) {
                Rng g = root.child(generation_stream(r, i, 1));
                slots[j].uncond = evaluate(c, generate_unconditional(gm, c.params, g));
                slots[j].has_uncond = true;
            }
            slots[j].before = evaluate(c, init);
            try {
                local_update(c, init, cfg.local);
            } catch (const NumericError& e) {
                throw NumericError("round " + std::to_string(r) + ": " + e.what(), e.index());
            }
            slots[j].after = evaluate(c, c.params);
        });

        std::vector<std::vector<float>> uploads;
        std::vector<double> w;
        for (std::size_t j = 0; j < part.size(); ++j) {
            const std::size_t i = part[j];
            report.rows.push_back({r, i, "beforeFT", slots[j].before.accuracy, slots[j].before.mean_loss});
            report.rows.push_back({r, i, "afterFT", slots[j].after.accuracy, slots[j].after.mean_loss});
            uploads.push_back(fed.clients[i].params);
            w.push_back(weights[i]);
            if (pf) {
                server.window.push(r, i, split_by_mask<float>(fed.clients[i].params, layout, fed.mask).generated);
            }
            if (final_round) {
                report.final_before_ft.push_back(slots[j].before.accuracy);
                report.final_after_ft.push_back(slots[j].after.accuracy);
                report.final_accuracy.push_back(cfg.method == "fedavg" ? slots[j].before.accuracy
                                                                       : slots[j].after.accuracy);
                if (slots[j].has_uncond) report.final_unconditional.push_back(slots[j].uncond.accuracy);
            }
        }
        if (cfg.method != "local-only") server.global = fedavg_aggregate(uploads, w);
        if (on_round) on_round(r, server);
    }

    report.average_accuracy = mean_of(report.final_accuracy);
    report.average_before_ft = mean_of(report.final_before_ft);
    report.average_after_ft = mean_of(report.final_after_ft);
    if (!report.final_unconditional.empty()) report.average_unconditional = mean_of(report.final_unconditional);
    for (const auto& c : fed.clients) report.final_params.push_back(c.params);
    if (server.estimator) report.diffusion_loss = server.estimator->loss_trace();
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (server_out) *server_out = std::move(server);
    return report;
}

}  // namespace pfedgpa
