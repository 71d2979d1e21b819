#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfedgpa/diffusion.hpp"
#include "pfedgpa/inversion.hpp"
#include "pfedgpa/layout.hpp"

namespace pfedgpa {

/// Corrupt, truncated or too-new container.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raw values as stored: 32-bit or 64-bit floats.
struct StoredValues {
    std::uint8_t width = 4;
    std::vector<double> values;

    std::vector<float> as_float() const { return {values.begin(), values.end()}; }
};

/// A tagged, little-endian container. Each section has a four-letter tag
/// and a name so several blocks of one kind can coexist (e.g. the
/// estimator's layout and the autoencoder's layout).
class Checkpoint {
public:
    struct Section {
        std::string tag;
        std::string name;
        std::vector<std::uint8_t> payload;
    };

    void put_layout(const std::string& name, const Layout& layout);
    void put_values(const std::string& name, const std::vector<float>& v);
    void put_values(const std::string& name, const std::vector<double>& v);
    void put_mask(const std::string& name, const LayerMask& mask);
    void put_norm(const std::string& name, const NormStats& norm);
    void put_schedule(const std::string& name, const NoiseSchedule& s);
    void put_latent(const std::string& name, const LatentCode& code);
    void put_meta(const std::string& key, const std::string& value);

    bool has(const std::string& tag, const std::string& name) const;
    Layout layout(const std::string& name) const;
    StoredValues values(const std::string& name) const;
    LayerMask mask(const std::string& name, const Layout& layout) const;
    std::vector<std::string> mask_names(const std::string& name) const;
    NormStats norm(const std::string& name) const;
    NoiseSchedule schedule(const std::string& name) const;
    LatentCode latent(const std::string& name) const;
    const std::map<std::string, std::string>& meta() const noexcept { return meta_; }
    std::string meta(const std::string& key) const;

    const std::vector<Section>& sections() const noexcept { return sections_; }

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    void put(std::string tag, std::string name, std::vector<std::uint8_t> payload);
    const Section& get(const std::string& tag, const std::string& name) const;

    std::vector<Section> sections_;
    std::map<std::string, std::string> meta_;
};

}  // namespace pfedgpa
