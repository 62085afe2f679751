#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace msse::cli {

// One JSON file written beside every command's outputs. The resolved config
// snapshot is complete: feeding the manifest back through --config replays
// the run bit-for-bit.
struct RunManifest {
    std::string command;
    nlohmann::json resolved_config;
    std::uint64_t seed = 0;
    std::string build_fingerprint;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> outputs;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    void write(const std::string& path) const;
    static RunManifest read(const std::string& path);
};

// True when j looks like a serialized RunManifest rather than a plain
// config file.
bool is_run_manifest(const nlohmann::json& j);

std::string build_fingerprint();
std::string iso8601_now();

}  // namespace msse::cli
