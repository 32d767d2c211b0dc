#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "diffusesg/codec.hpp"
#include "diffusesg/denoiser.hpp"
#include "diffusesg/diffusion.hpp"
#include "diffusesg/sampler.hpp"

namespace dsg {

// Small TOML-style reader: [section], key = value, # comments. Values are
// strings, numbers, booleans, or flat arrays of those.
struct TomlValue {
    std::variant<bool, int64_t, double, std::string, std::vector<TomlValue>> v;

    bool as_bool(const std::string& where) const;
    int64_t as_int(const std::string& where) const;
    double as_double(const std::string& where) const;
    const std::string& as_string(const std::string& where) const;
    std::vector<int> as_int_list(const std::string& where) const;
};

class TomlFile {
public:
    static TomlFile parse_file(const std::string& path);
    static TomlFile parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;
    const TomlValue& get(const std::string& section, const std::string& key) const;

    template <typename T>
    T value_or(const std::string& section, const std::string& key, T fallback) const;

    std::map<std::string, std::map<std::string, TomlValue>> sections;
};

// Full run configuration; CLI flags override file values.
struct RunConfig {
    std::string train_manifest;
    std::string val_manifest;
    EncodingScheme scheme = EncodingScheme::kBit;
    ArchitectureConfig arch = ArchitectureConfig::toy();
    TrainingConfig training;
    SamplerConfig sampler;
    std::string out_dir = "out";
    uint64_t seed = 0;
    int checkpoint_interval = 500;
    int log_interval = 10;
    double mmd_bandwidth = 1.0;

    static RunConfig from_file(const std::string& path);
    // Startup cross-field check; throws ConfigError naming the field path.
    void validate_against(const DatasetSpec& spec) const;
    std::string to_toml() const;
};

// One immutable record per run: config echo, hashes, seeds, timing, outputs.
void write_run_manifest(const std::string& path, const std::string& command,
                        const RunConfig& config, uint64_t checkpoint_hash, double wall_seconds,
                        const std::map<std::string, std::string>& extra);

}  // namespace dsg
