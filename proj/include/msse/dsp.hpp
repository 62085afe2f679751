#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "msse/common.hpp"
#include "msse/tensor.hpp"

namespace msse::dsp {

// One decoded audio clip. Samples are mono in [-1, 1] at the file's native
// rate; multichannel sources are averaged down.
struct Utterance {
    std::vector<double> samples;
    int sample_rate = 0;
    int label = -1;
    std::string speaker;
    std::string source_path;
    std::string id;
};

// Front-end configuration. The hop default reads the 12.5 ms figure as the
// hop (75 % frame overlap); both are configurable and recorded in cache
// metadata.
struct DspConfig {
    double frame_ms = 50.0;
    double hop_ms = 12.5;
    int fft_size = 2048;
    int n_filters = 40;
    int n_coeffs = 39;
    double log_floor = 1e-10;

    // Stable content hash; caches built under a different config refuse to load.
    std::string fingerprint() const;
};

struct MelFilterbank {
    int n_filters = 0;
    int fft_size = 0;
    int sample_rate = 0;
    std::vector<double> weights;    // [n_filters x (fft_size/2 + 1)], row-major
    std::vector<double> center_hz;  // one center per filter

    int bins() const { return fft_size / 2 + 1; }
    double weight(int filter, int bin) const { return weights[filter * bins() + bin]; }
};

struct MfccMatrix {
    TensorPtr coeffs;  // [T x n_coeffs]
    double frame_ms = 50.0;
    double hop_ms = 12.5;
    int sample_rate = 0;
    std::string utterance_id;
};

// ---- WAV ----------------------------------------------------------------

// PCM WAV reader: 16/24/32-bit integer or 32-bit float, any channel count.
// Malformed files raise FormatError naming the byte offset.
Utterance load_wav(const std::string& path);
void write_wav_pcm16(const std::string& path, const std::vector<double>& samples, int sample_rate);

// ---- pipeline stages ------------------------------------------------------

double mel_from_hz(double hz);
double hz_from_mel(double mel);

int frame_length_samples(int sample_rate, double frame_ms);
int hop_length_samples(int sample_rate, double hop_ms);
std::int64_t frame_count(std::int64_t n_samples, int frame_len, int hop);

// Splits the signal into overlapping frames, each scaled by a periodic
// Hamming window w[n] = 0.54 - 0.46 cos(2 pi n / L).
TensorPtr frame_and_window(const Utterance& u, double frame_ms = 50.0, double hop_ms = 12.5);

// Per-frame |FFT|^2 on the one-sided bins 0..fft_size/2. Frames shorter
// than fft_size are zero padded; longer is a configuration error.
TensorPtr power_spectrum(const TensorPtr& frames, int fft_size = 2048);

MelFilterbank build_mel_filterbank(int sample_rate, int n_filters = 40, int fft_size = 2048);
TensorPtr apply_filterbank(const TensorPtr& power, const MelFilterbank& fb);

std::vector<double> dct2_orthonormal(const std::vector<double>& x);
std::vector<double> idct2_orthonormal(const std::vector<double>& y);

MfccMatrix extract_mfcc(const Utterance& u, const MelFilterbank& fb, const DspConfig& cfg = {});

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

// ---- feature cache records -------------------------------------------------
// Binary layout (little endian): magic "MSSE", version u32, T u32,
// n_coeffs u32, hop_ms f64, frame_ms f64, sample_rate u32, then
// T*n_coeffs row-major 32-bit floats.

void write_feature_record(const std::string& path, const MfccMatrix& m);
MfccMatrix read_feature_record(const std::string& path);

}  // namespace msse::dsp
