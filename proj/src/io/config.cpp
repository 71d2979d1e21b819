#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "pfedgpa/config.hpp"

namespace pfedgpa {

ConfigFileError::ConfigFileError(const std::string& origin, std::size_t line, std::string key, const std::string& why)
    : ConfigError(origin + (line ? ":" + std::to_string(line) : std::string()) + ": " +
                  (key.empty() ? std::string() : "'" + key + "': ") + why),
      key_(std::move(key)),
      line_(line) {}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct BadValue {
    std::string why;
};

std::size_t to_size(const std::string& v) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw BadValue{"expected a non-negative integer, got '" + v + "'"};
    return out;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (v.empty() || used != v.size()) throw BadValue{"expected a number, got '" + v + "'"};
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw BadValue{"expected true or false, got '" + v + "'"};
}

std::string show(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

struct Field {
    std::string key;
    std::function<void(FederationConfig&, const std::string&)> set;
    std::function<std::string(const FederationConfig&)> get;
};

#define SIZE_FIELD(key, member)                                                        \
    Field {                                                                            \
        key, [](FederationConfig& c, const std::string& v) { c.member = to_size(v); }, \
            [](const FederationConfig& c) { return std::to_string(c.member); }         \
    }
#define INT_FIELD(key, member)                                                                           \
    Field {                                                                                              \
        key, [](FederationConfig& c, const std::string& v) { c.member = static_cast<int>(to_size(v)); }, \
            [](const FederationConfig& c) { return std::to_string(c.member); }                           \
    }
#define DOUBLE_FIELD(key, member)                                                        \
    Field {                                                                              \
        key, [](FederationConfig& c, const std::string& v) { c.member = to_double(v); }, \
            [](const FederationConfig& c) { return show(c.member); }                     \
    }
#define STRING_FIELD(key, member)                                              \
    Field {                                                                    \
        key, [](FederationConfig& c, const std::string& v) { c.member = v; },  \
            [](const FederationConfig& c) { return c.member; }                 \
    }
#define BOOL_FIELD(key, member)                                                        \
    Field {                                                                            \
        key, [](FederationConfig& c, const std::string& v) { c.member = to_bool(v); }, \
            [](const FederationConfig& c) { return std::string(c.member ? "true" : "false"); } \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        SIZE_FIELD("n_clients", n_clients),
        SIZE_FIELD("rounds", rounds),
        DOUBLE_FIELD("participation", participation),
        SIZE_FIELD("window", window),
        STRING_FIELD("method", method),
        Field{"seed", [](FederationConfig& c, const std::string& v) { c.seed = to_size(v); },
              [](const FederationConfig& c) { return std::to_string(c.seed); }},
        SIZE_FIELD("workers", workers),
        SIZE_FIELD("new_clients", new_clients),

        STRING_FIELD("data.kind", data.kind),
        STRING_FIELD("data.images", data.images),
        STRING_FIELD("data.labels", data.labels),
        STRING_FIELD("data.csv", data.csv),
        INT_FIELD("data.blobs.n_classes", data.blobs.n_classes),
        SIZE_FIELD("data.blobs.dim", data.blobs.dim),
        DOUBLE_FIELD("data.blobs.radius", data.blobs.radius),
        DOUBLE_FIELD("data.blobs.noise_std", data.blobs.noise_std),
        SIZE_FIELD("data.blobs.per_class", data.blobs.per_class),

        DOUBLE_FIELD("partition.s_percent", partition.s_percent),
        SIZE_FIELD("partition.dominant_classes_per_client", partition.dominant_classes_per_client),
        SIZE_FIELD("partition.samples_per_client", partition.samples_per_client),
        SIZE_FIELD("partition.test_samples", partition.test_samples),
        SIZE_FIELD("partition.n_groups", partition.n_groups),

        STRING_FIELD("model.arch", model.arch),
        SIZE_FIELD("model.hidden", model.hidden),

        SIZE_FIELD("local.epochs", local.epochs),
        SIZE_FIELD("local.batch_size", local.batch_size),
        DOUBLE_FIELD("local.lr", local.lr),
        DOUBLE_FIELD("local.momentum", local.momentum),

        SIZE_FIELD("diffusion_T", diffusion_T),
        STRING_FIELD("schedule", schedule),
        DOUBLE_FIELD("beta_start", beta_start),
        DOUBLE_FIELD("beta_end", beta_end),

        STRING_FIELD("estimator.kind", estimator.kind),
        SIZE_FIELD("estimator.width", estimator.width),
        SIZE_FIELD("estimator.depth", estimator.depth),
        SIZE_FIELD("estimator.time_dim", estimator.time_dim),
        SIZE_FIELD("estimator.unet_channels", estimator.unet_channels),

        SIZE_FIELD("diffusion.steps", diffusion.steps),
        SIZE_FIELD("diffusion.batch_size", diffusion.batch_size),
        STRING_FIELD("diffusion.optimizer", diffusion.optimizer),
        DOUBLE_FIELD("diffusion.lr", diffusion.lr),
        DOUBLE_FIELD("diffusion.momentum", diffusion.momentum),
        SIZE_FIELD("diffusion.chunk", diffusion.chunk),

        STRING_FIELD("generation", generation),
        STRING_FIELD("training", training),
        SIZE_FIELD("final_train_steps", final_train_steps),
        STRING_FIELD("generator", generator),
        Field{"inversion_sign",
              [](FederationConfig& c, const std::string& v) {
                  if (v == "minus") c.inversion_sign = NoiseSign::Minus;
                  else if (v == "plus") c.inversion_sign = NoiseSign::Plus;
                  else throw BadValue{"expected minus or plus, got '" + v + "'"};
              },
              [](const FederationConfig& c) {
                  return std::string(c.inversion_sign == NoiseSign::Minus ? "minus" : "plus");
              }},
        STRING_FIELD("generated_layers", generated_layers),
        BOOL_FIELD("normalize", normalize),
        STRING_FIELD("ae", ae),

        STRING_FIELD("ae.kind", ae_cfg.kind),
        SIZE_FIELD("ae.latent_dim", ae_cfg.latent_dim),
        SIZE_FIELD("ae.channels", ae_cfg.channels),
        DOUBLE_FIELD("ae.augment_sigma_input", ae_cfg.augment_sigma_input),
        DOUBLE_FIELD("ae.augment_sigma_latent", ae_cfg.augment_sigma_latent),
        SIZE_FIELD("ae.steps", ae_cfg.steps),
        SIZE_FIELD("ae.batch_size", ae_cfg.batch_size),
        DOUBLE_FIELD("ae.lr", ae_cfg.lr),
        SIZE_FIELD("ae.chunk", ae_cfg.chunk),

        BOOL_FIELD("record_unconditional", record_unconditional),
        SIZE_FIELD("checkpoint_every", checkpoint_every),

        DOUBLE_FIELD("guidance.omega", guidance.omega),
        SIZE_FIELD("guidance.init_rounds", guidance.init_rounds),
        SIZE_FIELD("guidance.denoise_steps", guidance.denoise_steps),
        SIZE_FIELD("guidance.start_step", guidance.start_step),
        STRING_FIELD("guidance.delta_scale", guidance.delta_scale),
        STRING_FIELD("guidance.delta_sign", guidance.delta_sign),
    };
    return f;
}

#undef SIZE_FIELD
#undef INT_FIELD
#undef DOUBLE_FIELD
#undef STRING_FIELD
#undef BOOL_FIELD

void assign(FederationConfig& cfg, const std::string& key, const std::string& value, const std::string& origin,
            std::size_t line) {
    if (key == "schema_version") {
        std::size_t v = 0;
        try {
            v = to_size(value);
        } catch (const BadValue& e) {
            throw ConfigFileError(origin, line, key, e.why);
        }
        if (v != kConfigSchemaVersion) {
            throw ConfigFileError(origin, line, key,
                                  "unsupported schema version " + value + " (this build reads " +
                                      std::to_string(kConfigSchemaVersion) + ")");
        }
        return;
    }
    for (const auto& f : fields()) {
        if (f.key != key) continue;
        try {
            f.set(cfg, value);
        } catch (const BadValue& e) {
            throw ConfigFileError(origin, line, key, e.why);
        }
        return;
    }
    throw ConfigFileError(origin, line, key, "unknown key");
}

}  // namespace

FederationConfig parse_config(const std::string& text, const std::string& origin, const FederationConfig& base) {
    FederationConfig cfg = base;
    std::istringstream in(text);
    std::string raw;
    for (std::size_t line = 1; std::getline(in, raw); ++line) {
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigFileError(origin, line, "", "expected 'key = value', got '" + body + "'");
        const std::string key = trim(body.substr(0, eq));
        if (key.empty()) throw ConfigFileError(origin, line, "", "missing key before '='");
        assign(cfg, key, trim(body.substr(eq + 1)), origin, line);
    }
    return cfg;
}

FederationConfig load_config(const std::string& path, const FederationConfig& base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigFileError(path, 0, "", "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path, base);
}

void apply_override(FederationConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigFileError("override", 0, assignment, "expected key=value");
    }
    assign(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "override", 0);
}

std::string render_config(const FederationConfig& cfg) {
    std::string out = "schema_version = " + std::to_string(kConfigSchemaVersion) + "\n";
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys{"schema_version"};
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

std::string git_blob_hash(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
    const std::string blob = header + bytes;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
        throw std::runtime_error("SHA-1 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
        const unsigned char b = md[i]; os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
    }
    return os.str();
}

}  // namespace pfedgpa
