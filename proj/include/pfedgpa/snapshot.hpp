#pragma once

#include <string>

#include "pfedgpa/checkpoint.hpp"
#include "pfedgpa/federation.hpp"

namespace pfedgpa {

/// Server state at the end of `round`: client layout, mask, norm stats,
/// schedule, estimator (and autoencoder) parameters, the global vector and
/// the window's (round, client) manifest.
Checkpoint server_checkpoint(const ServerSnapshot& s, const FederationConfig& cfg, std::size_t round,
                             const std::string& config_hash);

/// Human-readable summary of every section.
std::string describe_checkpoint(const Checkpoint& ck);

}  // namespace pfedgpa
