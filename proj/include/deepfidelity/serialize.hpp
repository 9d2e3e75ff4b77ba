#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deepfidelity/errors.hpp"

namespace deepfidelity {

// CRC-32 (IEEE), table-driven.
class Crc32 {
public:
    Crc32() : state_(0xFFFFFFFFu) {}

    void update(const void* data, size_t len) {
        const auto* p = static_cast<const uint8_t*>(data);
        uint32_t c = state_;
        for (size_t i = 0; i < len; ++i) c = table()[(c ^ p[i]) & 0xFF] ^ (c >> 8);
        state_ = c;
    }

    uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

private:
    static const std::array<uint32_t, 256>& table() {
        static const std::array<uint32_t, 256> t = [] {
            std::array<uint32_t, 256> tt{};
            for (uint32_t i = 0; i < 256; ++i) {
                uint32_t c = i;
                for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
                tt[i] = c;
            }
            return tt;
        }();
        return t;
    }

    uint32_t state_;
};

// Little-endian binary writer over an output stream.
class BinWriter {
public:
    explicit BinWriter(std::ostream& os) : os_(os) {}

    void bytes(const void* p, size_t n) { os_.write(static_cast<const char*>(p), n); }

    void u32(uint32_t v) {
        uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
        bytes(b, 4);
    }

    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

    void f64(double v) {
        uint64_t u = std::bit_cast<uint64_t>(v);
        u32(static_cast<uint32_t>(u));
        u32(static_cast<uint32_t>(u >> 32));
    }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    bool good() const { return os_.good(); }

private:
    std::ostream& os_;
};

// Little-endian binary reader with truncation detection.
class BinReader {
public:
    BinReader(std::istream& is, std::string file_desc)
        : is_(is), desc_(std::move(file_desc)) {}

    void bytes(void* p, size_t n, const std::string& what) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is_.gcount()) != n)
            throw FormatError(desc_ + ": truncated while reading " + what);
    }

    uint32_t u32(const std::string& what) {
        uint8_t b[4];
        bytes(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }

    double f64(const std::string& what) {
        uint64_t lo = u32(what);
        uint64_t hi = u32(what);
        return std::bit_cast<double>(lo | (hi << 32));
    }

    std::string str(uint32_t max_len, const std::string& what) {
        uint32_t n = u32(what + " length");
        if (n > max_len) throw FormatError(desc_ + ": implausible length for " + what);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }

    bool at_eof() {
        is_.peek();
        return is_.eof();
    }

private:
    std::istream& is_;
    std::string desc_;
};

} // namespace deepfidelity
