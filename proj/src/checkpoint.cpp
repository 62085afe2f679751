#include <cstring>
#include <fstream>
#include <map>

#include "msse/model.hpp"

namespace msse::model {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'S', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct NamedBlob {
    std::string name;
    std::vector<int> shape;
    const std::vector<double>* values;
};

// Every serialized tensor in fixed order: learnable parameters, then
// batch-norm running statistics.
std::vector<NamedBlob> collect_blobs(Model& m) {
    std::vector<NamedBlob> blobs;
    for (auto& [name, t] : m.named_params()) blobs.push_back({name, t->shape, &t->data});
    for (auto& [name, bn] : m.named_bn()) {
        const int c = bn->channels();
        blobs.push_back({name + ".running_mean", {c}, &bn->running_mean});
        blobs.push_back({name + ".running_var", {c}, &bn->running_var});
    }
    return blobs;
}

void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
    Model& mm = const_cast<Model&>(m);  // named_params is non-const but does not mutate
    auto blobs = collect_blobs(mm);

    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& b : blobs) {
        manifest.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}});
        offset += b.values->size();
    }
    nlohmann::json header = {
        {"config", m.cfg.to_json()}, {"trained", m.trained}, {"tensors", manifest}};
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    put_bytes(out, kMagic, 8);
    std::uint32_t version = kVersion;
    put_bytes(out, &version, 4);
    std::uint64_t header_len = header_str.size();
    put_bytes(out, &header_len, 8);
    put_bytes(out, header_str.data(), header_str.size());
    for (const auto& b : blobs) {
        for (double v : *b.values) {
            const float f = static_cast<float>(v);
            put_bytes(out, &f, 4);
        }
    }
    if (!out) throw IoError("short write while writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw FormatError(path + ": bad checkpoint header");
    }
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    if (!in.read(reinterpret_cast<char*>(&version), 4) ||
        !in.read(reinterpret_cast<char*>(&header_len), 8)) {
        throw FormatError(path + ": bad checkpoint header");
    }
    if (version != kVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::string header_str(header_len, '\0');
    if (!in.read(header_str.data(), static_cast<std::streamsize>(header_len))) {
        throw FormatError(path + ": truncated checkpoint header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": unparseable checkpoint header: " + e.what());
    }

    Rng rng(0);  // every drawn value is overwritten below
    Model m = Model::init(ModelConfig::from_json(header.at("config")), rng);
    m.trained = header.at("trained").get<bool>();

    auto blobs = collect_blobs(m);
    std::map<std::string, NamedBlob*> by_name;
    for (auto& b : blobs) by_name[b.name] = &b;

    const auto& manifest = header.at("tensors");
    if (manifest.size() != blobs.size()) {
        throw FormatError(path + ": checkpoint lists " + std::to_string(manifest.size()) +
                          " tensors but the config requires " + std::to_string(blobs.size()));
    }
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError(path + ": unexpected tensor '" + name + "' in checkpoint");
        }
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != it->second->shape) {
            throw FormatError(path + ": tensor '" + name + "' has shape " + shape_str(shape) +
                              " but the config requires " + shape_str(it->second->shape));
        }
        if (entry.at("offset").get<std::uint64_t>() != expected_offset) {
            throw FormatError(path + ": tensor '" + name + "' has a non-contiguous offset");
        }
        auto* values = const_cast<std::vector<double>*>(it->second->values);
        for (double& v : *values) {
            float f;
            if (!in.read(reinterpret_cast<char*>(&f), 4)) {
                throw FormatError(path + ": truncated checkpoint blob at tensor '" + name + "'");
            }
            v = f;
        }
        expected_offset += values->size();
        by_name.erase(it);
    }
    return m;
}

}  // namespace msse::model
