#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "msse/data.hpp"

namespace msse::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kNoiseAmplitude = 0.0316227766016838;  // -30 dBFS
constexpr double kCarrierAmplitude = 0.4;
constexpr double kVibratoDepthHz = 15.0;
}  // namespace

std::string generate_synthetic_corpus(const SyntheticSpec& spec, const std::string& out_dir) {
    if (spec.n_classes < 1) throw ConfigError("synthetic corpus needs at least one class");
    if (spec.clips_per_class < 1) throw ConfigError("synthetic corpus needs at least one clip per class");
    if (spec.duration_s <= 0) throw ConfigError("clip duration must be positive");
    if (spec.sample_rate <= 0) throw ConfigError("sample rate must be positive");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create corpus directory " + out_dir + ": " + ec.message());

    const int n_samples = static_cast<int>(std::lround(spec.duration_s * spec.sample_rate));
    const std::string manifest_path = out_dir + "/manifest.csv";
    std::ofstream manifest(manifest_path);
    if (!manifest) throw IoError("cannot write manifest: " + manifest_path);
    manifest << "path,label\n";

    std::vector<double> samples(n_samples);
    for (int k = 0; k < spec.n_classes; ++k) {
        char label[32];
        std::snprintf(label, sizeof label, "class_%02d", k);
        const std::string class_dir = out_dir + "/" + label;
        std::filesystem::create_directories(class_dir, ec);
        if (ec) throw IoError("cannot create class directory " + class_dir + ": " + ec.message());

        const double f0 = 180.0 + 60.0 * k;
        const double vibrato_hz = 2.0 + k;
        const double am_depth = std::min(0.1 * k, 0.95);
        for (int i = 0; i < spec.clips_per_class; ++i) {
            Rng rng = Rng(spec.seed).derive(static_cast<std::uint64_t>(k) * 1000003u + i);
            for (int t = 0; t < n_samples; ++t) {
                const double time = static_cast<double>(t) / spec.sample_rate;
                // instantaneous frequency f0 + D*sin(2 pi v t)
                const double phase = 2.0 * kPi * f0 * time -
                                     (kVibratoDepthHz / vibrato_hz) * std::cos(2.0 * kPi * vibrato_hz * time);
                const double envelope = 1.0 + am_depth * std::sin(2.0 * kPi * vibrato_hz * time);
                samples[t] = kCarrierAmplitude * envelope * std::sin(phase) +
                             kNoiseAmplitude * rng.normal();
            }
            char clip[32];
            std::snprintf(clip, sizeof clip, "%03d.wav", i);
            dsp::write_wav_pcm16(class_dir + "/" + clip, samples, spec.sample_rate);
            manifest << label << '/' << clip << ',' << label << '\n';
        }
    }
    if (!manifest) throw IoError("short write while writing manifest: " + manifest_path);
    return manifest_path;
}

}  // namespace msse::data
