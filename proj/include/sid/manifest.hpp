#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace sid {

inline constexpr const char* kToolVersion = "0.1.0";

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

// Reproducibility record written next to every command's outputs: the
// resolved configuration, seeds, and content hashes of all inputs are enough
// to re-execute the run bit-identically (live judge calls excepted).
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::json resolved_config;
    uint64_t seed = 0;
    nlohmann::json input_hashes;  // label -> sha256
    std::string checkpoint_hash;
    std::string tool_version = kToolVersion;
    std::string timestamp;  // ISO 8601 UTC, set by write()

    nlohmann::json to_json() const;
    void write(const std::string& path);
};

}  // namespace sid
