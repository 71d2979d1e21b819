#include <algorithm>
#include <cstdio>
#include <numeric>

#include "pfedgpa/snapshot.hpp"

namespace pfedgpa {

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string shape_text(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

std::string stats_text(const std::vector<double>& v) {
    if (v.empty()) return "empty";
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return "min " + fmt("%.4g", *lo) + ", max " + fmt("%.4g", *hi) + ", mean " + fmt("%.4g", mean);
}

}  // namespace

Checkpoint server_checkpoint(const ServerSnapshot& s, const FederationConfig& cfg, std::size_t round,
                             const std::string& config_hash) {
    Checkpoint ck;
    ck.put_layout("client", s.model.layout);
    ck.put_mask("generated", s.model.mask);
    ck.put_norm("generated", s.model.norm);
    ck.put_schedule("server", s.model.schedule);
    ck.put_values("global", s.global);
    if (s.estimator) {
        ck.put_layout("estimator", s.estimator->layout());
        ck.put_values("estimator", s.estimator->params());
        const auto& ec = s.estimator->config();
        ck.put_meta("estimator.dim", std::to_string(s.estimator->dim()));
        ck.put_meta("estimator.kind", s.estimator->kind());
        ck.put_meta("estimator.width", std::to_string(ec.width));
        ck.put_meta("estimator.depth", std::to_string(ec.depth));
        ck.put_meta("estimator.time_dim", std::to_string(ec.time_dim));
        ck.put_meta("estimator.unet_channels", std::to_string(ec.unet_channels));
        ck.put_meta("estimator.steps_taken", std::to_string(s.estimator->steps_taken()));
    }
    if (s.model.ae) {
        ck.put_layout("ae", s.model.ae->layout());
        ck.put_values("ae", s.model.ae->params());
        ck.put_meta("ae.kind", s.model.ae->config().kind);
        ck.put_meta("ae.latent_dim", std::to_string(s.model.ae->latent_dim()));
        ck.put_meta("ae.channels", std::to_string(s.model.ae->config().channels));
    }
    std::string window;
    for (const auto& e : s.window.entries()) {
        window += (window.empty() ? "" : ",") + std::to_string(e.round) + ":" + std::to_string(e.client);
    }
    ck.put_meta("window", window);
    ck.put_meta("round", std::to_string(round));
    ck.put_meta("method", cfg.method);
    ck.put_meta("seed", std::to_string(cfg.seed));
    ck.put_meta("config_hash", config_hash);
    return ck;
}

std::string describe_checkpoint(const Checkpoint& ck) {
    std::string out = "format version " + std::to_string(kCheckpointVersion) + ", " + std::to_string(ck.sections().size()) +
                      " sections\n";
    for (const auto& sec : ck.sections()) {
        out += sec.tag + " '" + sec.name + "' (" + std::to_string(sec.payload.size()) + " bytes)\n";
        if (sec.tag == "LAYT") {
            const auto l = ck.layout(sec.name);
            out += "  " + std::to_string(l.size()) + " blocks, " + std::to_string(l.total()) + " values\n";
            for (const auto& e : l.entries()) {
                out += "    " + e.name + " " + shape_text(e.shape) + " offset " + std::to_string(e.offset) + " length " +
                       std::to_string(e.length) + "\n";
            }
        } else if (sec.tag == "VALS") {
            const auto v = ck.values(sec.name);
            out += "  " + std::to_string(v.values.size()) + " x " + std::to_string(8 * v.width) + "-bit, " +
                   stats_text(v.values) + "\n";
        } else if (sec.tag == "MASK") {
            std::string names;
            for (const auto& n : ck.mask_names(sec.name)) names += (names.empty() ? "" : ", ") + n;
            out += "  generated: " + names + "\n";
        } else if (sec.tag == "NORM") {
            const auto n = ck.norm(sec.name);
            const auto at_floor = std::count_if(n.std.begin(), n.std.end(), [&](double s) { return s <= n.floor; });
            out += "  dim " + std::to_string(n.mean.size()) + ", floor " + fmt("%.3g", n.floor) + ", " +
                   std::to_string(at_floor) + " dims at the floor\n";
            out += "  mean: " + stats_text(n.mean) + "\n  std:  " + stats_text(n.std) + "\n";
        } else if (sec.tag == "SCHD") {
            const auto s = ck.schedule(sec.name);
            out += std::string("  ") + schedule_kind_name(s.kind) + ", T " + std::to_string(s.T) + ", beta " +
                   fmt("%.4g", s.beta(1)) + " -> " + fmt("%.4g", s.beta(s.T)) + ", abar_T " + fmt("%.4g", s.alpha_bar(s.T)) +
                   ", hash " + std::to_string(s.hash()) + "\n";
        } else if (sec.tag == "LATN") {
            const auto l = ck.latent(sec.name);
            out += "  dim " + std::to_string(l.dim()) + ", steps " + std::to_string(l.steps()) + ", schedule hash " +
                   std::to_string(l.schedule_hash) + "\n";
        }
    }
    for (const auto& [k, v] : ck.meta()) {
        std::string shown = v.size() > 80 ? v.substr(0, 77) + "..." : v;
        out += "meta " + k + " = " + shown + "\n";
    }
    return out;
}

}  // namespace pfedgpa
