#pragma once

#include <string>
#include <vector>

#include "pfedgpa/federation.hpp"

namespace pfedgpa {

inline constexpr int kConfigSchemaVersion = 1;

/// A config problem located in a file: `key` and `line` name the offender
/// (line 0 for command-line overrides).
class ConfigFileError : public ConfigError {
public:
    ConfigFileError(const std::string& origin, std::size_t line, std::string key, const std::string& why);
    const std::string& key() const noexcept { return key_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string key_;
    std::size_t line_;
};

/// Applies `key = value` lines (blank lines and # comments ignored) on top of
/// `base`. A `schema_version` line, if present, must match.
FederationConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                              const FederationConfig& base = {});
FederationConfig load_config(const std::string& path, const FederationConfig& base = {});

/// One `dotted.key=value` override.
void apply_override(FederationConfig& cfg, const std::string& assignment);

/// Every key with its resolved value, one `key = value` per line, in a fixed
/// order. parse_config(render_config(c)) == c.
std::string render_config(const FederationConfig& cfg);

std::vector<std::string> config_keys();

/// Git-style blob hash: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_hash(const std::string& bytes);

}  // namespace pfedgpa
