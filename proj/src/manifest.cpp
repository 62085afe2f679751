#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "msse/data.hpp"

namespace msse::data {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(trim(line.substr(start)));
            break;
        }
        fields.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

std::string strip_extension(const std::string& p) {
    const std::size_t dot = p.find_last_of('.');
    const std::size_t sep = p.find_last_of('/');
    if (dot == std::string::npos || (sep != std::string::npos && dot < sep)) return p;
    return p.substr(0, dot);
}

}  // namespace

CorpusManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ":1: empty manifest");
    auto header = split_csv_line(line);
    bool has_speaker = false;
    if (header.size() == 3 && header[0] == "path" && header[1] == "label" &&
        header[2] == "speaker") {
        has_speaker = true;
    } else if (!(header.size() == 2 && header[0] == "path" && header[1] == "label")) {
        throw FormatError(path + ":1: expected header 'path,label' or 'path,label,speaker'");
    }

    CorpusManifest manifest;
    manifest.name = std::filesystem::path(path).stem().string();
    const std::filesystem::path base = std::filesystem::path(path).parent_path();

    std::set<std::string> seen_paths;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        const std::size_t expected = has_speaker ? 3 : 2;
        if (fields.size() != expected) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(expected) + " fields, got " +
                              std::to_string(fields.size()));
        }
        if (fields[0].empty()) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": empty path");
        }
        if (fields[1].empty()) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": empty label");
        }
        if (!seen_paths.insert(fields[0]).second) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": duplicate path '" +
                              fields[0] + "'");
        }
        ManifestEntry e;
        e.raw_path = fields[0];
        const std::filesystem::path p(fields[0]);
        e.path = p.is_absolute() ? p.string() : (base / p).string();
        e.label = fields[1];
        if (has_speaker) e.speaker = fields[2];
        e.id = strip_extension(e.raw_path);
        manifest.entries.push_back(std::move(e));
    }
    if (manifest.entries.empty()) throw FormatError(path + ": manifest lists no utterances");

    std::set<std::string> labels;
    for (const auto& e : manifest.entries) labels.insert(e.label);
    int next_id = 0;
    for (const auto& l : labels) manifest.label_map[l] = next_id++;
    for (auto& e : manifest.entries) e.class_id = manifest.label_map.at(e.label);
    return manifest;
}

}  // namespace msse::data
