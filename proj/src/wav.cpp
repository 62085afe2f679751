#include "msse/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace msse::dsp {

namespace {

std::string offset_msg(const std::string& path, std::size_t offset, const std::string& what) {
    return path + ": " + what + " at byte offset " + std::to_string(offset);
}

std::uint16_t read_u16(const std::vector<unsigned char>& b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t read_u32(const std::vector<unsigned char>& b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

Utterance load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open wav file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw FormatError(offset_msg(path, bytes.size(), "truncated RIFF header"));
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0)
        throw FormatError(offset_msg(path, 0, "missing RIFF tag"));
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError(offset_msg(path, 8, "missing WAVE tag"));

    std::uint16_t format = 0;
    int channels = 0;
    int sample_rate = 0;
    int bits = 0;
    bool have_fmt = false;
    std::size_t data_off = 0;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::size_t chunk_off = pos;
        char id[5] = {0};
        std::memcpy(id, bytes.data() + pos, 4);
        const std::uint32_t size = read_u32(bytes, pos + 4);
        pos += 8;
        if (pos + size > bytes.size())
            throw FormatError(offset_msg(path, chunk_off, "chunk '" + std::string(id) +
                                                              "' overruns end of file"));
        if (std::strcmp(id, "fmt ") == 0) {
            if (size < 16) throw FormatError(offset_msg(path, chunk_off, "fmt chunk too small"));
            format = read_u16(bytes, pos);
            channels = read_u16(bytes, pos + 2);
            sample_rate = static_cast<int>(read_u32(bytes, pos + 4));
            bits = read_u16(bytes, pos + 14);
            if (format == kFormatExtensible) {
                // Resolve the real format from the extension's sub-format GUID.
                if (size < 40)
                    throw FormatError(offset_msg(path, chunk_off, "extensible fmt chunk too small"));
                format = read_u16(bytes, pos + 24);
            }
            have_fmt = true;
        } else if (std::strcmp(id, "data") == 0) {
            data_off = pos;
            data_len = size;
        }
        pos += size + (size % 2);  // chunks are word aligned
    }

    if (!have_fmt) throw FormatError(offset_msg(path, bytes.size(), "no fmt chunk found"));
    if (data_len == 0) throw FormatError(offset_msg(path, bytes.size(), "no data chunk found"));
    if (channels <= 0) throw FormatError(offset_msg(path, 0, "fmt declares zero channels"));
    if (sample_rate <= 0) throw FormatError(offset_msg(path, 0, "fmt declares zero sample rate"));
    if (format != kFormatPcm && format != kFormatFloat)
        throw FormatError(offset_msg(path, 0, "unsupported wav format code " + std::to_string(format)));
    if (format == kFormatPcm && bits != 16 && bits != 24 && bits != 32)
        throw FormatError(offset_msg(path, 0, "unsupported pcm bit depth " + std::to_string(bits)));
    if (format == kFormatFloat && bits != 32)
        throw FormatError(offset_msg(path, 0, "unsupported float bit depth " + std::to_string(bits)));

    const int bytes_per_sample = bits / 8;
    const std::size_t frame_bytes = static_cast<std::size_t>(bytes_per_sample) * channels;
    const std::size_t n_frames = data_len / frame_bytes;
    if (n_frames == 0) throw FormatError(offset_msg(path, data_off, "empty data chunk"));

    Utterance u;
    u.sample_rate = sample_rate;
    u.source_path = path;
    u.samples.resize(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
            const std::size_t off = data_off + f * frame_bytes + c * bytes_per_sample;
            double v = 0.0;
            if (format == kFormatFloat) {
                float fv;
                std::memcpy(&fv, bytes.data() + off, 4);
                v = fv;
            } else if (bits == 16) {
                std::int16_t s = static_cast<std::int16_t>(read_u16(bytes, off));
                v = s / 32768.0;
            } else if (bits == 24) {
                std::int32_t s = bytes[off] | (bytes[off + 1] << 8) | (bytes[off + 2] << 16);
                if (s & 0x800000) s |= ~0xFFFFFF;  // sign extend
                v = s / 8388608.0;
            } else {  // 32-bit int
                std::int32_t s = static_cast<std::int32_t>(read_u32(bytes, off));
                v = s / 2147483648.0;
            }
            acc += v;
        }
        u.samples[f] = std::clamp(acc / channels, -1.0, 1.0);
    }
    return u;
}

void write_wav_pcm16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    if (sample_rate <= 0) throw ConfigError("wav sample rate must be positive");
    if (samples.empty()) throw ConfigError("refusing to write an empty wav file");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open wav file for writing: " + path);

    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    auto put_u16 = [&](std::uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        out.write(reinterpret_cast<const char*>(b), 2);
    };

    out.write("RIFF", 4);
    put_u32(36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(16);
    put_u16(kFormatPcm);
    put_u16(1);  // mono
    put_u32(static_cast<std::uint32_t>(sample_rate));
    put_u32(static_cast<std::uint32_t>(sample_rate) * 2);  // byte rate
    put_u16(2);                                            // block align
    put_u16(16);
    out.write("data", 4);
    put_u32(data_bytes);
    for (double s : samples) {
        const double clamped = std::clamp(s, -1.0, 1.0);
        const long q = std::lround(clamped * 32768.0);
        put_u16(static_cast<std::uint16_t>(std::clamp(q, -32768L, 32767L)));
    }
    if (!out) throw IoError("short write while writing wav file: " + path);
}

}  // namespace msse::dsp
