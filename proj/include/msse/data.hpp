#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "msse/dsp.hpp"
#include "msse/training.hpp"

namespace msse::data {

struct ManifestEntry {
    std::string path;      // resolved relative to the manifest file
    std::string raw_path;  // exactly as written in the csv
    std::string label;
    std::string speaker;
    int class_id = -1;
    std::string id;  // raw path without extension
};

struct CorpusManifest {
    std::string name;
    std::vector<ManifestEntry> entries;
    std::map<std::string, int> label_map;  // sorted label -> contiguous class id

    int n_classes() const { return static_cast<int>(label_map.size()); }
};

// CSV with header path,label[,speaker]. Parse errors name the line.
CorpusManifest load_manifest(const std::string& path);

// Label-separable toy corpus: class k is a sine at 180 + 60k Hz with
// (2 + k) Hz vibrato and 0.1k amplitude-modulation depth, plus Gaussian
// noise at -30 dBFS.
struct SyntheticSpec {
    int n_classes = 6;
    int clips_per_class = 10;
    double duration_s = 1.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;
};

// Writes out_dir/class_<k>/<i>.wav plus out_dir/manifest.csv and returns the
// manifest path. Byte-identical across runs with the same spec.
std::string generate_synthetic_corpus(const SyntheticSpec& spec, const std::string& out_dir);

nlohmann::json dsp_config_to_json(const dsp::DspConfig& cfg);
dsp::DspConfig dsp_config_from_json(const nlohmann::json& j);

struct CacheEntry {
    std::string id;
    int label = -1;
    std::string source_path;
    std::string record_file;  // relative to the cache dir
};

struct FeatureCache {
    std::string dir;
    dsp::DspConfig config;
    std::vector<CacheEntry> entries;
};

// Extracts features for every manifest entry into binary records plus an
// index.json stamped with the dsp-config fingerprint.
FeatureCache cache_features(const CorpusManifest& manifest, const dsp::DspConfig& cfg,
                            const std::string& out_dir);

// Opens an existing cache; a fingerprint mismatch against `expected` is a
// stale-cache error.
FeatureCache open_cache(const std::string& dir, const dsp::DspConfig& expected);

training::FeatureSet load_feature_set(const FeatureCache& cache);

// Straight extraction with no on-disk cache.
training::FeatureSet extract_feature_set(const CorpusManifest& manifest,
                                         const dsp::DspConfig& cfg);

}  // namespace msse::data
