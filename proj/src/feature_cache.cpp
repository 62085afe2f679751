#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "msse/data.hpp"
#include "msse/kernels.hpp"

namespace msse::data {

nlohmann::json dsp_config_to_json(const dsp::DspConfig& cfg) {
    return nlohmann::json{{"frame_ms", cfg.frame_ms},   {"hop_ms", cfg.hop_ms},
                          {"fft_size", cfg.fft_size},   {"n_filters", cfg.n_filters},
                          {"n_coeffs", cfg.n_coeffs},   {"log_floor", cfg.log_floor}};
}

dsp::DspConfig dsp_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("dsp config must be a JSON object");
    dsp::DspConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "frame_ms") cfg.frame_ms = value.get<double>();
        else if (key == "hop_ms") cfg.hop_ms = value.get<double>();
        else if (key == "fft_size") cfg.fft_size = value.get<int>();
        else if (key == "n_filters") cfg.n_filters = value.get<int>();
        else if (key == "n_coeffs") cfg.n_coeffs = value.get<int>();
        else if (key == "log_floor") cfg.log_floor = value.get<double>();
        else throw ConfigError("unknown dsp config key '" + key + "'");
    }
    return cfg;
}

namespace {

// One filterbank per sample rate seen in the corpus. Map nodes are stable,
// so handing out references while other threads insert is safe; the
// lookup-or-build itself is serialized.
class FilterbankPool {
public:
    explicit FilterbankPool(const dsp::DspConfig& cfg) : cfg_(cfg) {}

    const dsp::MelFilterbank& get(int sample_rate) {
        const dsp::MelFilterbank* bank = nullptr;
#pragma omp critical(msse_filterbank_pool)
        {
            auto it = banks_.find(sample_rate);
            if (it == banks_.end()) {
                it = banks_
                         .emplace(sample_rate, dsp::build_mel_filterbank(
                                                   sample_rate, cfg_.n_filters, cfg_.fft_size))
                         .first;
            }
            bank = &it->second;
        }
        return *bank;
    }

private:
    dsp::DspConfig cfg_;
    std::map<int, dsp::MelFilterbank> banks_;
};

dsp::MfccMatrix extract_entry(const ManifestEntry& e, const dsp::DspConfig& cfg,
                              FilterbankPool& banks) {
    dsp::Utterance u = dsp::load_wav(e.path);
    u.label = e.class_id;
    u.speaker = e.speaker;
    u.id = e.id;
    return dsp::extract_mfcc(u, banks.get(u.sample_rate), cfg);
}

}  // namespace

FeatureCache cache_features(const CorpusManifest& manifest, const dsp::DspConfig& cfg,
                            const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create cache directory " + out_dir + ": " + ec.message());

    FeatureCache cache;
    cache.dir = out_dir;
    cache.config = cfg;
    cache.entries.resize(manifest.entries.size());

    FilterbankPool banks(cfg);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (int i = 0; i < static_cast<int>(manifest.entries.size()); ++i) {
        try {
            const ManifestEntry& e = manifest.entries[i];
            char rec[32];
            std::snprintf(rec, sizeof rec, "rec%05d.bin", i);
            const dsp::MfccMatrix m = extract_entry(e, cfg, banks);
            dsp::write_feature_record(out_dir + "/" + rec, m);
            cache.entries[i] = {e.id, e.class_id, e.path, rec};
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : cache.entries) {
        entries.push_back({{"id", e.id},
                           {"label", e.label},
                           {"source", e.source_path},
                           {"record", e.record_file}});
    }
    nlohmann::json index = {{"fingerprint", cfg.fingerprint()},
                            {"dsp_config", dsp_config_to_json(cfg)},
                            {"entries", entries}};
    const std::string index_path = out_dir + "/index.json";
    std::ofstream out(index_path);
    if (!out) throw IoError("cannot write cache index: " + index_path);
    out << index.dump(2) << '\n';
    if (!out) throw IoError("short write while writing cache index: " + index_path);
    return cache;
}

FeatureCache open_cache(const std::string& dir, const dsp::DspConfig& expected) {
    const std::string index_path = dir + "/index.json";
    std::ifstream in(index_path);
    if (!in) throw IoError("cannot open cache index: " + index_path);
    nlohmann::json index;
    try {
        in >> index;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(index_path + ": unparseable cache index: " + e.what());
    }
    const std::string found = index.at("fingerprint").get<std::string>();
    const std::string want = expected.fingerprint();
    if (found != want) {
        throw DataError("stale feature cache at " + dir + ": built with dsp fingerprint " + found +
                        " but the current config has " + want +
                        "; re-run the extract command to regenerate it");
    }
    FeatureCache cache;
    cache.dir = dir;
    cache.config = dsp_config_from_json(index.at("dsp_config"));
    for (const auto& e : index.at("entries")) {
        cache.entries.push_back({e.at("id").get<std::string>(), e.at("label").get<int>(),
                                 e.at("source").get<std::string>(),
                                 e.at("record").get<std::string>()});
    }
    return cache;
}

training::FeatureSet load_feature_set(const FeatureCache& cache) {
    training::FeatureSet set;
    for (const auto& e : cache.entries) {
        const dsp::MfccMatrix m = dsp::read_feature_record(cache.dir + "/" + e.record_file);
        set.ids.push_back(e.id);
        set.labels.push_back(e.label);
        set.coeffs.push_back(m.coeffs);
        set.n_classes = std::max(set.n_classes, e.label + 1);
    }
    if (set.size() == 0) throw DataError("feature cache at " + cache.dir + " holds no entries");
    return set;
}

training::FeatureSet extract_feature_set(const CorpusManifest& manifest,
                                         const dsp::DspConfig& cfg) {
    training::FeatureSet set;
    set.ids.resize(manifest.entries.size());
    set.labels.resize(manifest.entries.size());
    set.coeffs.resize(manifest.entries.size());
    FilterbankPool banks(cfg);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (int i = 0; i < static_cast<int>(manifest.entries.size()); ++i) {
        try {
            const ManifestEntry& e = manifest.entries[i];
            const dsp::MfccMatrix m = extract_entry(e, cfg, banks);
            set.ids[i] = e.id;
            set.labels[i] = e.class_id;
            set.coeffs[i] = m.coeffs;
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    set.n_classes = manifest.n_classes();
    return set;
}

}  // namespace msse::data
