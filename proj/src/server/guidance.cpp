#include <cmath>

#include "pfedgpa/guidance.hpp"

namespace pfedgpa {

std::vector<double> guided_eps(const NoiseEstimator<double>& est, std::span<const double> theta, std::size_t t,
                               std::span<const double> delta, double omega, double scale) {
    if (theta.size() != delta.size() || theta.size() != est.dim()) {
        throw LayoutError("guided_eps: theta, delta and estimator dimensions differ (" + std::to_string(theta.size()) +
                          ", " + std::to_string(delta.size()) + ", " + std::to_string(est.dim()) + ")");
    }
    auto eps = est.predict_one(theta, t);
    const double c = (1.0 + omega) * scale;
    if (c == 0.0) return eps;
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] -= c * delta[i];
    return eps;
}

std::vector<float> initialize_new_client(const GenerativeModel& g, ClientState& client, const GuidanceConfig& gcfg,
                                         const LocalUpdateConfig& lcfg, Rng& rng, std::vector<InitRound>* trace) {
    auto record = [&](std::size_t round, std::span<const float> p) {
        if (!trace) return;
        auto r = evaluate(client, p);
        trace->push_back({round, r.accuracy, r.mean_loss});
    };
    std::vector<float> hat = client.params;
    if (gcfg.init_rounds == 0) {
        auto out = local_update(client, hat, lcfg);
        record(1, out);
        return out;
    }
    if (!g.estimator) throw ConfigError("new-client initialization needs a trained estimator");
    if (client.layout().total() != g.layout.total() || g.model_dim() != g.estimator->dim()) {
        throw LayoutError("client " + std::to_string(client.id) + " does not match the server's model space");
    }
    const std::size_t start = gcfg.resolved_start();
    if (gcfg.denoise_steps == 0 || gcfg.denoise_steps > start || start > g.schedule.T) {
        throw ConfigError("guidance needs 1 <= denoise_steps <= start_step <= diffusion_T");
    }
    double scale = 1.0;
    if (gcfg.delta_scale == "per-lr") {
        if (lcfg.lr <= 0.0) throw ConfigError("delta_scale = per-lr needs a positive learning rate");
        scale = 1.0 / lcfg.lr;
    } else if (gcfg.delta_scale != "raw") {
        throw ConfigError("unknown guidance.delta_scale '" + gcfg.delta_scale + "' (expected raw or per-lr)");
    }
    if (gcfg.delta_sign == "score") {
        scale = -scale;
    } else if (gcfg.delta_sign != "algorithm") {
        throw ConfigError("unknown guidance.delta_sign '" + gcfg.delta_sign + "' (expected algorithm or score)");
    }

    std::vector<float> prev = client.params;  // theta_{l-1}
    for (std::size_t l = 1; l <= gcfg.init_rounds; ++l) {
        auto cur = local_update(client, hat, lcfg);  // theta_l
        auto zc = g.encode(cur);
        auto zp = g.encode(prev);
        std::vector<double> delta(zc.size());
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = zp[i] - zc[i];

        auto eps0 = rng.normal_vector<double>(zc.size());
        auto x = forward_marginal<double>(zc, start, eps0, g.schedule);
        for (std::size_t t = start; t > start - gcfg.denoise_steps; --t) {
            auto eps = guided_eps(*g.estimator, x, t, delta, gcfg.omega, scale);
            x = posterior_mean<double>(x, eps, t, g.schedule);
            auto z = rng.normal_vector<double>(x.size());
            const double sigma = g.schedule.sigma(t);
            for (std::size_t i = 0; i < x.size(); ++i) x[i] += sigma * z[i];
            if (!all_finite<double>(x)) {
                throw NumericError("client " + std::to_string(client.id) + ": guided denoising produced a non-finite value at round " +
                                       std::to_string(l) + ", step " + std::to_string(t),
                                   t);
            }
        }
        hat = g.decode(x, cur);
        if (!all_finite<float>(hat)) {
            throw NumericError("client " + std::to_string(client.id) + ": guided parameters are not finite", l);
        }
        record(l, hat);
        prev = std::move(cur);
    }
    auto out = local_update(client, hat, lcfg);
    record(gcfg.init_rounds + 1, out);
    return out;
}

}  // namespace pfedgpa
