#include "msse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "msse/kernels.hpp"

namespace msse::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Round-trip formatting: std::to_string truncates to six decimals, which
// would collapse distinct sub-1e-6 values into one fingerprint.
std::string canon_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

std::string DspConfig::fingerprint() const {
    std::string canon = "frame_ms=" + canon_double(frame_ms) + ";hop_ms=" + canon_double(hop_ms) +
                        ";fft_size=" + std::to_string(fft_size) +
                        ";n_filters=" + std::to_string(n_filters) +
                        ";n_coeffs=" + std::to_string(n_coeffs) +
                        ";log_floor=" + canon_double(log_floor);
    return hex64(fnv1a64(canon));
}

double mel_from_hz(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double hz_from_mel(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int frame_length_samples(int sample_rate, double frame_ms) {
    return static_cast<int>(std::lround(sample_rate * frame_ms / 1000.0));
}

int hop_length_samples(int sample_rate, double hop_ms) {
    return std::max(1, static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0)));
}

std::int64_t frame_count(std::int64_t n_samples, int frame_len, int hop) {
    if (n_samples < frame_len) return 0;
    return (n_samples - frame_len) / hop + 1;
}

TensorPtr frame_and_window(const Utterance& u, double frame_ms, double hop_ms) {
    if (u.sample_rate <= 0) throw ConfigError("utterance has no sample rate");
    if (frame_ms <= 0 || hop_ms <= 0) throw ConfigError("frame and hop must be positive");
    const int frame_len = frame_length_samples(u.sample_rate, frame_ms);
    const int hop = hop_length_samples(u.sample_rate, hop_ms);
    const std::int64_t n = static_cast<std::int64_t>(u.samples.size());
    const std::int64_t t_frames = frame_count(n, frame_len, hop);
    if (t_frames <= 0)
        throw DataError("utterance '" + u.id + "' is shorter than one analysis frame (" +
                        std::to_string(n) + " samples < " + std::to_string(frame_len) + ")");

    std::vector<double> window(frame_len);
    for (int i = 0; i < frame_len; ++i)
        window[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / frame_len);

    auto frames = Tensor::create({static_cast<int>(t_frames), frame_len});
    for (std::int64_t t = 0; t < t_frames; ++t) {
        const std::int64_t start = t * hop;
        for (int i = 0; i < frame_len; ++i)
            frames->data[t * frame_len + i] = u.samples[start + i] * window[i];
    }
    return frames;
}

void fft_radix2(std::vector<std::complex<double>>& a) {
    const int n = static_cast<int>(a.size());
    if (!is_power_of_two(n)) throw ConfigError("fft size must be a power of two, got " + std::to_string(n));
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / len;
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                const std::complex<double> even = a[i + k];
                const std::complex<double> odd = a[i + k + len / 2] * w;
                a[i + k] = even + odd;
                a[i + k + len / 2] = even - odd;
                w *= wlen;
            }
        }
    }
}

TensorPtr power_spectrum(const TensorPtr& frames, int fft_size) {
    if (frames->shape.size() != 2)
        throw DimensionError("power_spectrum expects [frames x samples], got " + shape_str(frames->shape));
    if (!is_power_of_two(fft_size))
        throw ConfigError("fft size must be a power of two, got " + std::to_string(fft_size));
    const int t_frames = frames->shape[0];
    const int frame_len = frames->shape[1];
    if (frame_len > fft_size)
        throw ConfigError("frame length " + std::to_string(frame_len) + " exceeds fft size " +
                          std::to_string(fft_size));
    const int bins = fft_size / 2 + 1;
    auto out = Tensor::create({t_frames, bins});
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled())
    for (int t = 0; t < t_frames; ++t) {
        std::vector<std::complex<double>> buf(fft_size, {0.0, 0.0});
        for (int i = 0; i < frame_len; ++i) buf[i] = {frames->data[t * frame_len + i], 0.0};
        fft_radix2(buf);
        for (int k = 0; k < bins; ++k) out->data[t * bins + k] = std::norm(buf[k]);
    }
    return out;
}

MelFilterbank build_mel_filterbank(int sample_rate, int n_filters, int fft_size) {
    if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
    if (n_filters < 40)
        throw ConfigError("mel filterbank needs at least 40 filters, got " + std::to_string(n_filters));
    if (!is_power_of_two(fft_size))
        throw ConfigError("fft size must be a power of two, got " + std::to_string(fft_size));

    MelFilterbank fb;
    fb.n_filters = n_filters;
    fb.fft_size = fft_size;
    fb.sample_rate = sample_rate;
    const int bins = fb.bins();
    fb.weights.assign(static_cast<std::size_t>(n_filters) * bins, 0.0);
    fb.center_hz.resize(n_filters);

    // n_filters + 2 edge points equally spaced on the mel scale from 0 Hz to
    // Nyquist; filter m rises over [edge m, edge m+1] and falls over
    // [edge m+1, edge m+2].
    const double mel_max = mel_from_hz(sample_rate / 2.0);
    std::vector<double> edge_hz(n_filters + 2);
    for (int i = 0; i < n_filters + 2; ++i)
        edge_hz[i] = hz_from_mel(mel_max * i / (n_filters + 1));

    for (int m = 0; m < n_filters; ++m) {
        const double lo = edge_hz[m];
        const double mid = edge_hz[m + 1];
        const double hi = edge_hz[m + 2];
        fb.center_hz[m] = mid;
        bool any = false;
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / fft_size;
            double w = 0.0;
            if (f >= lo && f <= mid && mid > lo)
                w = (f - lo) / (mid - lo);
            else if (f > mid && f <= hi && hi > mid)
                w = (hi - f) / (hi - mid);
            if (w > 0.0) {
                fb.weights[static_cast<std::size_t>(m) * bins + k] = w;
                any = true;
            }
        }
        if (!any)
            throw ConfigError("mel filter " + std::to_string(m) +
                              " covers no fft bin; increase fft size or lower the filter count");
    }
    return fb;
}

TensorPtr apply_filterbank(const TensorPtr& power, const MelFilterbank& fb) {
    if (power->shape.size() != 2 || power->shape[1] != fb.bins())
        throw DimensionError("power spectrum shape " + shape_str(power->shape) +
                             " does not match filterbank with " + std::to_string(fb.bins()) + " bins");
    const int t_frames = power->shape[0];
    const int bins = fb.bins();
    auto out = Tensor::create({t_frames, fb.n_filters});
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled())
    for (int t = 0; t < t_frames; ++t) {
        for (int m = 0; m < fb.n_filters; ++m) {
            double acc = 0.0;
            for (int k = 0; k < bins; ++k)
                acc += fb.weights[static_cast<std::size_t>(m) * bins + k] * power->data[t * bins + k];
            out->data[t * fb.n_filters + m] = acc;
        }
    }
    return out;
}

std::vector<double> dct2_orthonormal(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    if (n == 0) throw DimensionError("dct of an empty vector");
    std::vector<double> y(n, 0.0);
    const double s0 = std::sqrt(1.0 / n);
    const double sk = std::sqrt(2.0 / n);
    for (int k = 0; k < n; ++k) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += x[i] * std::cos(kPi * (2.0 * i + 1.0) * k / (2.0 * n));
        y[k] = (k == 0 ? s0 : sk) * acc;
    }
    return y;
}

std::vector<double> idct2_orthonormal(const std::vector<double>& y) {
    const int n = static_cast<int>(y.size());
    if (n == 0) throw DimensionError("idct of an empty vector");
    std::vector<double> x(n, 0.0);
    const double s0 = std::sqrt(1.0 / n);
    const double sk = std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k)
            acc += (k == 0 ? s0 : sk) * y[k] * std::cos(kPi * (2.0 * i + 1.0) * k / (2.0 * n));
        x[i] = acc;
    }
    return x;
}

MfccMatrix extract_mfcc(const Utterance& u, const MelFilterbank& fb, const DspConfig& cfg) {
    if (fb.sample_rate != u.sample_rate)
        throw ConfigError("filterbank built for " + std::to_string(fb.sample_rate) +
                          " Hz cannot be applied to a " + std::to_string(u.sample_rate) +
                          " Hz utterance");
    if (fb.n_filters != cfg.n_filters || fb.fft_size != cfg.fft_size)
        throw ConfigError("filterbank geometry does not match the dsp config");
    if (cfg.n_coeffs <= 0 || cfg.n_coeffs > cfg.n_filters)
        throw ConfigError("n_coeffs must be in [1, n_filters]");
    if (cfg.log_floor <= 0) throw ConfigError("log floor must be positive");

    auto frames = frame_and_window(u, cfg.frame_ms, cfg.hop_ms);
    auto power = power_spectrum(frames, cfg.fft_size);
    auto mel = apply_filterbank(power, fb);

    const int t_frames = mel->shape[0];
    auto coeffs = Tensor::create({t_frames, cfg.n_coeffs});
#pragma omp parallel for schedule(static) if (kernels::parallel_enabled())
    for (int t = 0; t < t_frames; ++t) {
        std::vector<double> log_mel(cfg.n_filters);
        for (int m = 0; m < cfg.n_filters; ++m)
            log_mel[m] = std::log(mel->data[t * cfg.n_filters + m] + cfg.log_floor);
        const std::vector<double> c = dct2_orthonormal(log_mel);
        for (int k = 0; k < cfg.n_coeffs; ++k) coeffs->data[t * cfg.n_coeffs + k] = c[k];
    }
    for (double v : coeffs->data)
        if (!std::isfinite(v))
            throw NumericError("non-finite mfcc coefficient for utterance '" + u.id + "'");

    MfccMatrix m;
    m.coeffs = coeffs;
    m.frame_ms = cfg.frame_ms;
    m.hop_ms = cfg.hop_ms;
    m.sample_rate = u.sample_rate;
    m.utterance_id = u.id;
    return m;
}

// ---- feature cache records -------------------------------------------------

namespace {
constexpr char kRecordMagic[4] = {'M', 'S', 'S', 'E'};
constexpr std::uint32_t kRecordVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(path + ": truncated feature record");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw FormatError(path + ": truncated feature record");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}
}  // namespace

void write_feature_record(const std::string& path, const MfccMatrix& m) {
    if (!m.coeffs || m.coeffs->shape.size() != 2)
        throw DimensionError("feature record expects a [frames x coeffs] matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open feature record for writing: " + path);
    out.write(kRecordMagic, 4);
    put_u32(out, kRecordVersion);
    put_u32(out, static_cast<std::uint32_t>(m.coeffs->shape[0]));
    put_u32(out, static_cast<std::uint32_t>(m.coeffs->shape[1]));
    put_f64(out, m.hop_ms);
    put_f64(out, m.frame_ms);
    put_u32(out, static_cast<std::uint32_t>(m.sample_rate));
    for (double v : m.coeffs->data) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    if (!out) throw IoError("short write while writing feature record: " + path);
}

MfccMatrix read_feature_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature record: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kRecordMagic, 4) != 0)
        throw FormatError(path + ": bad feature record magic at byte offset 0");
    const std::uint32_t version = get_u32(in, path);
    if (version != kRecordVersion)
        throw FormatError(path + ": unsupported feature record version " + std::to_string(version));
    const std::uint32_t t_frames = get_u32(in, path);
    const std::uint32_t n_coeffs = get_u32(in, path);
    MfccMatrix m;
    m.hop_ms = get_f64(in, path);
    m.frame_ms = get_f64(in, path);
    m.sample_rate = static_cast<int>(get_u32(in, path));
    if (t_frames == 0 || n_coeffs == 0)
        throw FormatError(path + ": feature record declares an empty matrix");
    m.coeffs = Tensor::create({static_cast<int>(t_frames), static_cast<int>(n_coeffs)});
    for (std::size_t i = 0; i < m.coeffs->data.size(); ++i) {
        const std::uint32_t bits = get_u32(in, path);
        float f;
        std::memcpy(&f, &bits, 4);
        m.coeffs->data[i] = f;
    }
    return m;
}

}  // namespace msse::dsp
