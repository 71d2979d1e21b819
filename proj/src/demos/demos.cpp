#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pfedgpa/demos.hpp"
#include "pfedgpa/metrics.hpp"

namespace pfedgpa {

namespace {

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string num(double v) { return fmt("%.6g", v); }

void emit(const DemoOptions& opt, const std::string& file, const std::string& text) {
    if (!opt.out_dir.empty()) write_text(opt.out_dir + "/" + file, text);
}

std::size_t rounds_to(const std::vector<double>& acc, double target) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        if (acc[i] >= target) return i + 1;
    }
    return acc.size() + 1;
}

double rel_error(std::span<const double> a, std::span<const double> b) {
    double d = 0, n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        n += b[i] * b[i];
    }
    return std::sqrt(d / std::max(n, 1e-300));
}

}  // namespace

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

FederationConfig scaled_fixture_config(std::uint64_t seed) {
    FederationConfig cfg;
    cfg.seed = seed;
    cfg.n_clients = 10;
    cfg.rounds = 12;
    cfg.window = 5;
    cfg.method = "pfedgpa";
    cfg.partition.s_percent = 20;
    cfg.partition.samples_per_client = 600;
    cfg.partition.test_samples = 200;
    cfg.model.arch = "mlp-tiny";
    cfg.diffusion_T = 100;
    // keeps abar_T near 5e-3, so theta_T still carries the source parameters
    cfg.beta_start = 1e-4;
    cfg.beta_end = 0.1;
    cfg.diffusion.lr = 1e-3;
    cfg.generation = "final-round";
    cfg.training = "final-window";
    cfg.final_train_steps = 1500;
    cfg.guidance.delta_sign = "score";
    return cfg;
}

FixtureRun run_scaled_fixture(const FederationConfig& cfg, const std::vector<std::string>& methods) {
    Rng root(cfg.seed);
    Rng drng = root.child(1);
    auto pool = load_dataset(cfg.data, drng);
    FixtureRun run;
    run.fed = build_federation(cfg, pool, 1);
    for (const auto& m : methods) {
        Federation f = run.fed;
        f.cfg.method = m;
        run.reports[m] = run_experiment(std::move(f), m == "pfedgpa" ? &run.server : nullptr);
    }
    return run;
}

NewClientTrial new_client_trial(const FixtureRun& run, std::size_t horizon) {
    const auto& cfg = run.fed.cfg;
    if (run.fed.clients.size() <= cfg.n_clients) throw ConfigError("the fixture has no held-out client");
    if (!run.server.model.estimator) throw ConfigError("the fixture run has no trained estimator");
    const ClientState& fresh = run.fed.clients[cfg.n_clients];
    NewClientTrial t;

    ClientState u = fresh;
    std::vector<float> p = fresh.params;
    for (std::size_t r = 0; r < horizon; ++r) {
        p = local_update(u, p, cfg.local);
        t.unguided.push_back(evaluate(u, p).accuracy);
    }
    const std::size_t tail = std::min<std::size_t>(5, horizon);
    for (std::size_t r = horizon - tail; r < horizon; ++r) t.plateau += t.unguided[r] / static_cast<double>(tail);

    ClientState c = fresh;
    Rng grng = Rng(cfg.seed).child(0x6e6577);
    std::vector<InitRound> trace;
    auto q = initialize_new_client(run.server.model, c, cfg.guidance, cfg.local, grng, &trace);
    for (const auto& r : trace) t.guided.push_back(r.accuracy);
    while (t.guided.size() < horizon) {
        q = local_update(c, q, cfg.local);
        t.guided.push_back(evaluate(c, q).accuracy);
    }
    t.guided.resize(horizon);
    t.rounds_guided = rounds_to(t.guided, 0.95 * t.plateau);
    t.rounds_unguided = rounds_to(t.unguided, 0.95 * t.plateau);
    return t;
}

DemoResult demo_inversion_roundtrip(const DemoOptions& opt) {
    DemoResult res{"inversion-roundtrip", true, {}, {}};
    const std::uint64_t seed = opt.seeds.empty() ? 1 : opt.seeds.front();
    Rng rng(seed);
    std::string csv = "dim,T,rel_error\n";
    double worst = 0.0;
    for (std::size_t T : {100u, 1000u}) {
        const auto s = default_schedule(T);
        for (int k = 0; k < 20; ++k) {
            // 16 .. 4096, evenly spaced in log
            const auto dim = static_cast<std::size_t>(std::lround(16.0 * std::pow(256.0, k / 19.0)));
            auto theta = rng.normal_vector<double>(dim);
            auto latent = extract_latent(theta, s, rng);
            const double e = rel_error(reconstruct(latent, s), theta);
            worst = std::max(worst, e);
            csv += std::to_string(dim) + "," + std::to_string(T) + "," + fmt("%.3e", e) + "\n";
        }
    }
    emit(opt, "inversion_roundtrip.csv", csv);
    res.values["max_rel_error"] = worst;
    res.pass = worst <= 1e-8;
    res.lines.push_back("max relative reconstruction error " + fmt("%.3e", worst) + " (threshold 1e-8)");
    return res;
}

DemoResult demo_mixture_ddpm(const DemoOptions& opt) {
    DemoResult res{"mixture-ddpm", false, {}, {}};
    const std::uint64_t seed = opt.seeds.empty() ? 1 : opt.seeds.front();
    Rng root(seed);
    auto draw = [](Rng& r) { return (r.uniform() < 0.5 ? -2.0 : 2.0) + 0.25 * r.normal(); };
    Rng data_rng = root.child(1);
    std::vector<std::vector<float>> data(2000);
    for (auto& v : data) v = {static_cast<float>(draw(data_rng))};

    EstimatorConfig ec;
    ec.kind = "mlp";
    ec.width = 128;
    ec.depth = 3;
    DiffusionTrainConfig dc;
    dc.steps = 4000;
    dc.batch_size = 128;
    dc.lr = 1e-3;
    dc.workers = opt.workers;
    const auto s = default_schedule(100);
    Rng train_rng = root.child(2);
    auto est = train_diffusion(data, ec, dc, s, train_rng);

    Rng sample_rng = root.child(3);
    auto gen = sample<double>(est, s, sample_rng, 2000);
    Rng oracle_rng = root.child(4);
    std::vector<double> g, o;
    for (const auto& v : gen) g.push_back(v[0]);
    for (int i = 0; i < 2000; ++i) o.push_back(draw(oracle_rng));

    std::vector<double> gs = g, os = o;
    std::sort(gs.begin(), gs.end());
    std::sort(os.begin(), os.end());
    double w1 = 0;
    for (std::size_t i = 0; i < gs.size(); ++i) w1 += std::abs(gs[i] - os[i]);
    w1 /= static_cast<double>(gs.size());
    const double left = static_cast<double>(std::count_if(g.begin(), g.end(), [](double x) { return x < 0; })) / 2000.0;

    std::string csv = "generated,oracle\n";
    for (std::size_t i = 0; i < g.size(); ++i) csv += num(g[i]) + "," + num(o[i]) + "\n";
    emit(opt, "mixture_samples.csv", csv);
    emit(opt, "mixture_loss.csv", loss_csv(est.loss_trace()));

    res.values["w1"] = w1;
    res.values["mass_left"] = left;
    res.pass = w1 <= 0.2 && left >= 0.3 && left <= 0.7;
    res.lines.push_back("Wasserstein-1 " + fmt("%.4f", w1) + " (threshold 0.2)");
    res.lines.push_back("mass below 0: " + fmt("%.3f", left) + ", above: " + fmt("%.3f", 1 - left) + " (each >= 0.3)");
    return res;
}

DemoResult demo_collapse(const DemoOptions& opt) {
    DemoResult res{"collapse", false, {}, {}};
    std::string csv = "seed,client,local_accuracy,fedavg_midpoint_accuracy,inversion_accuracy\n";
    std::vector<double> loc_min, mid_avg, inv_gap_min;
    bool trained = true;
    for (std::uint64_t seed : opt.seeds) {
        Rng root(seed);
        ModelSpec spec;
        spec.input_shape = {2};
        spec.n_classes = 2;
        spec.hidden = 16;
        auto model = std::make_shared<const ClassifierModel>(build_classifier(spec));
        Rng irng = root.child(1);
        const auto init = init_params(model->layout(), irng);

        // client 1 sees the mirror image of client 0's labels
        auto make = [&](Rng& r, bool mirror) {
            Dataset d;
            d.feature_shape = {2};
            d.n_classes = 2;
            for (int i = 0; i < 400; ++i) {
                const float x[2] = {static_cast<float>(r.normal()), static_cast<float>(r.normal())};
                d.push(x, (x[0] > 0) != mirror ? 1 : 0);
            }
            return d;
        };
        std::vector<ClientState> clients;
        for (int c = 0; c < 2; ++c) {
            Rng drng = root.child(10 + c);
            auto train = make(drng, c == 1);
            auto test = make(drng, c == 1);
            clients.push_back(make_client(c, train, test, model, init, root.child(20 + c)));
        }
        LocalUpdateConfig lcfg;
        lcfg.epochs = 20;
        lcfg.batch_size = 20;
        lcfg.lr = 0.1;

        // parameter corpus: independent local runs from the shared init
        std::vector<std::vector<float>> corpus, own(2);
        for (int c = 0; c < 2; ++c) {
            for (std::uint64_t k = 0; k < 12; ++k) {
                ClientState run = clients[c];
                run.rng = root.child(100 + 50 * c + k);
                corpus.push_back(local_update(run, init, lcfg));
            }
            own[c] = corpus[static_cast<std::size_t>(12 * c)];
        }
        std::vector<float> mid(own[0].size());
        for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5f * (own[0][i] + own[1][i]);

        GenerativeModel g;
        g.layout = model->layout();
        g.mask = LayerMask::all(g.layout);
        g.schedule = make_schedule(100, 1e-4, 0.1);
        g.norm = fit_norm(corpus);
        std::vector<std::vector<float>> normed;
        for (const auto& v : corpus) normed.push_back(normalize<float>(v, g.norm));
        EstimatorConfig ec;
        ec.width = 128;
        DiffusionTrainConfig dc;
        dc.steps = 1500;
        dc.lr = 1e-3;
        dc.workers = opt.workers;
        Rng trng = root.child(2);
        g.estimator = std::make_shared<NetEstimator>(train_diffusion(normed, ec, dc, g.schedule, trng));

        double lmin = 1.0, mavg = 0.0, gap = 1.0;
        for (int c = 0; c < 2; ++c) {
            Rng grng = root.child(30 + c);
            const double l = evaluate(clients[c], own[c]).accuracy;
            const double m = evaluate(clients[c], mid).accuracy;
            const double v = evaluate(clients[c], generate_personalized(g, own[c], grng)).accuracy;
            lmin = std::min(lmin, l);
            mavg += 0.5 * m;
            trained = trained && l >= 0.9;
            csv += std::to_string(seed) + "," + std::to_string(c) + "," + num(l) + "," + num(m) + "," + num(v) + "\n";
            gap = std::min(gap, v - m);
        }
        loc_min.push_back(lmin);
        mid_avg.push_back(mavg);
        inv_gap_min.push_back(gap);
    }
    emit(opt, "collapse.csv", csv);
    const double ml = median(loc_min), mm = median(mid_avg), mg = median(inv_gap_min);
    res.values["median_local_min"] = ml;
    res.values["median_midpoint_avg"] = mm;
    res.values["median_inversion_minus_midpoint"] = mg;
    res.pass = trained && mm < ml && mg >= 0.0;
    res.lines.push_back(std::string("local accuracy >= 0.9 for every client and seed: ") + (trained ? "yes" : "no"));
    res.lines.push_back("median min local accuracy " + fmt("%.3f", ml) + ", median FedAvg midpoint accuracy " +
                        fmt("%.3f", mm));
    res.lines.push_back("median over seeds of min_c (inversion - midpoint) " + fmt("%+.3f", mg) + " (>= 0)");
    return res;
}

DemoResult demo_new_client(const DemoOptions& opt) {
    DemoResult res{"new-client", false, {}, {}};
    std::string csv = "seed,round,guided_accuracy,unguided_accuracy\n";
    std::vector<double> rg, ru;
    for (std::uint64_t seed : opt.seeds) {
        auto cfg = scaled_fixture_config(seed);
        cfg.workers = opt.workers;
        auto run = run_scaled_fixture(cfg, {"pfedgpa"});
        auto t = new_client_trial(run);
        rg.push_back(static_cast<double>(t.rounds_guided));
        ru.push_back(static_cast<double>(t.rounds_unguided));
        for (std::size_t r = 0; r < t.guided.size(); ++r) {
            csv += std::to_string(seed) + "," + std::to_string(r + 1) + "," + num(t.guided[r]) + "," + num(t.unguided[r]) + "\n";
        }
        res.lines.push_back("seed " + std::to_string(seed) + ": plateau " + fmt("%.3f", t.plateau) + ", rounds to 95% guided " +
                            std::to_string(t.rounds_guided) + ", unguided " + std::to_string(t.rounds_unguided));
    }
    emit(opt, "new_client.csv", csv);
    const double mg = median(rg), mu = median(ru);
    res.values["median_rounds_guided"] = mg;
    res.values["median_rounds_unguided"] = mu;
    res.values["ratio"] = mg / mu;
    res.pass = mg <= mu;
    res.lines.push_back("median rounds guided " + fmt("%.1f", mg) + " vs unguided " + fmt("%.1f", mu) + ", ratio " +
                        fmt("%.2f", mg / mu));
    return res;
}

std::vector<std::string> demo_names() { return {"collapse", "inversion-roundtrip", "mixture-ddpm", "new-client"}; }

DemoResult run_demo(const std::string& name, const DemoOptions& opt) {
    if (name == "collapse") return demo_collapse(opt);
    if (name == "inversion-roundtrip") return demo_inversion_roundtrip(opt);
    if (name == "mixture-ddpm") return demo_mixture_ddpm(opt);
    if (name == "new-client") return demo_new_client(opt);
    throw ConfigError("unknown demo '" + name + "' (expected collapse, inversion-roundtrip, mixture-ddpm or new-client)");
}

}  // namespace pfedgpa
