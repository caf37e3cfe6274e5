#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "bsc/errors.hpp"

namespace bsc::byteio {

// Little-endian writers; the on-disk formats are defined byte-exact.

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

// Bounds-checked reader whose errors name the failing offset.
struct Reader {
    const uint8_t* data;
    size_t len;
    std::string what;
    size_t pos = 0;

    void need(size_t n, const char* field) const {
        if (pos + n > len) {
            throw FormatError(what + ": truncated at offset " + std::to_string(pos) +
                              ": need " + std::to_string(n) + " bytes for " + field +
                              ", have " + std::to_string(len - pos));
        }
    }
    size_t remaining() const { return len - pos; }
    uint8_t u8(const char* field) {
        need(1, field);
        return data[pos++];
    }
    uint16_t u16(const char* field) {
        need(2, field);
        uint16_t v = static_cast<uint16_t>(data[pos] | (data[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* field) {
        need(4, field);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* field) {
        need(8, field);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* field) {
        uint32_t bits = u32(field);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void bytes(uint8_t* dst, size_t n, const char* field) {
        need(n, field);
        std::memcpy(dst, data + pos, n);
        pos += n;
    }
    void expect_magic(const char magic[4]) {
        need(4, "magic");
        if (std::memcmp(data + pos, magic, 4) != 0) {
            throw FormatError(what + ": bad magic at offset 0 (expected \"" +
                              std::string(magic, 4) + "\")");
        }
        pos += 4;
    }
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace bsc::byteio
