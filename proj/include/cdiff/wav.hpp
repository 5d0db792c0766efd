// 16-bit PCM mono RIFF/WAVE reading and writing.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdiff/core.hpp"

namespace cdiff {

class WavError : public std::runtime_error {
public:
    WavError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

namespace detail {
inline std::uint32_t le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
inline void put32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}
}  // namespace detail

/// Reads a 16-bit PCM mono file; samples are scaled to [-1, 1].
inline Signal read_wav(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw WavError("cannot open " + path.string(), 0);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw WavError("file too short for a RIFF header", bytes.size());
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0) throw WavError("missing RIFF tag", 0);
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) throw WavError("missing WAVE tag", 8);

    bool have_fmt = false;
    std::uint16_t channels = 0, bits = 0;
    std::uint32_t rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t size = detail::le32(bytes.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) throw WavError("chunk runs past end of file", pos);
        if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
            if (size < 16) throw WavError("fmt chunk too small", pos);
            const std::uint16_t format = detail::le16(bytes.data() + body);
            channels = detail::le16(bytes.data() + body + 2);
            rate = detail::le32(bytes.data() + body + 4);
            bits = detail::le16(bytes.data() + body + 14);
            if (format != 1) throw WavError("unsupported format tag " + std::to_string(format) + " (need PCM)", body);
            if (channels != 1)
                throw WavError("unsupported channel count " + std::to_string(channels) + " (need mono)", body + 2);
            if (bits != 16) throw WavError("unsupported bit depth " + std::to_string(bits) + " (need 16)", body + 14);
            have_fmt = true;
        } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
            if (!have_fmt) throw WavError("data chunk before fmt chunk", pos);
            if (size == 0) throw WavError("empty data chunk", pos);
            if (size % 2 != 0) throw WavError("odd data chunk size for 16-bit audio", pos + 4);
            Signal s;
            s.sample_rate = rate;
            s.samples.resize(size / 2);
            for (std::size_t i = 0; i < s.samples.size(); ++i) {
                const auto raw = static_cast<std::int16_t>(detail::le16(bytes.data() + body + 2 * i));
                s.samples[i] = std::max(-1.0, static_cast<double>(raw) / 32767.0);
            }
            return s;
        }
        pos = body + size + (size & 1u);
    }
    throw WavError("no data chunk", pos);
}

/// Writes 16-bit PCM mono through a temporary file and an atomic rename.
/// Samples outside [-1, 1] are clamped; returns how many were.
inline std::size_t write_wav(const std::filesystem::path& path, const Signal& signal) {
    require(!signal.samples.empty(), "write_wav: empty signal");
    require(all_finite(signal.samples), "write_wav: non-finite samples");
    require(signal.sample_rate > 0.0 && signal.sample_rate <= 4294967295.0, "write_wav: invalid sample rate");
    const auto rate = static_cast<std::uint32_t>(std::llround(signal.sample_rate));
    const auto data_bytes = static_cast<std::uint32_t>(signal.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    detail::put32(out, 36 + data_bytes);
    out.append("WAVEfmt ");
    detail::put32(out, 16);
    detail::put16(out, 1);
    detail::put16(out, 1);
    detail::put32(out, rate);
    detail::put32(out, rate * 2);
    detail::put16(out, 2);
    detail::put16(out, 16);
    out.append("data");
    detail::put32(out, data_bytes);
    std::size_t clipped = 0;
    for (double v : signal.samples) {
        if (v > 1.0 || v < -1.0) ++clipped;
        const double c = std::clamp(v, -1.0, 1.0);
        detail::put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
    }
    if (clipped > 0) warn("write_wav: clamped " + std::to_string(clipped) + " samples outside [-1, 1]");
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("write_wav: cannot open " + tmp.string());
        os.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!os) {
            os.close();
            std::filesystem::remove(tmp);
            throw std::runtime_error("write_wav: write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
    return clipped;
}

}  // namespace cdiff
