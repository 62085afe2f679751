#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "msse/common.hpp"
#include "msse/run_manifest.hpp"

namespace msse::cli {

nlohmann::json RunManifest::to_json() const {
    return nlohmann::json{{"command", command},
                          {"resolved_config", resolved_config},
                          {"seed", seed},
                          {"build_fingerprint", build_fingerprint},
                          {"started_at", started_at},
                          {"finished_at", finished_at},
                          {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.resolved_config = j.at("resolved_config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.build_fingerprint = j.value("build_fingerprint", "");
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    if (j.contains("outputs")) m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
}

void RunManifest::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write run manifest: " + path);
    out << to_json().dump(2) << '\n';
    if (!out) throw IoError("short write while writing run manifest: " + path);
}

RunManifest RunManifest::read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open run manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": unparseable run manifest: " + e.what());
    }
    return from_json(j);
}

bool is_run_manifest(const nlohmann::json& j) {
    return j.is_object() && j.contains("resolved_config") && j.contains("command");
}

std::string build_fingerprint() {
#if defined(__clang__)
    return std::string("clang-") + __clang_version__;
#elif defined(__GNUC__)
    return "gcc-" + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__) + "." +
           std::to_string(__GNUC_PATCHLEVEL__);
#else
    return "unknown-compiler";
#endif
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace msse::cli
