#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "tte/error.hpp"

namespace tte::io {

template <class U>
U to_le(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        U out{};
        auto* src = reinterpret_cast<const unsigned char*>(&v);
        auto* dst = reinterpret_cast<unsigned char*>(&out);
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            dst[i] = src[sizeof(U) - 1 - i];
        }
        return out;
    } else {
        return v;
    }
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
    v = to_le(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    v = to_le(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_floats(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (float f : values) {
            put_u32(out, std::bit_cast<std::uint32_t>(f));
        }
    }
}

inline void need(std::istream& in, const char* what) {
    if (!in) {
        throw StructuralError(std::string("truncated file while reading ") + what);
    }
}

inline std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    need(in, "u32");
    return to_le(v);
}

inline std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    need(in, "u64");
    return to_le(v);
}

inline std::string get_string(std::istream& in, std::uint32_t limit = 1u << 20) {
    auto len = get_u32(in);
    if (len > limit) {
        throw StructuralError("string length " + std::to_string(len) + " exceeds limit");
    }
    std::string s(len, '\0');
    in.read(s.data(), len);
    need(in, "string");
    return s;
}

inline void get_floats(std::istream& in, std::span<float> values) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    need(in, "float block");
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : values) {
            f = std::bit_cast<float>(to_le(std::bit_cast<std::uint32_t>(f)));
        }
    }
}

inline void decode_floats(const unsigned char* bytes, std::span<float> values) {
    std::memcpy(values.data(), bytes, values.size_bytes());
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : values) {
            f = std::bit_cast<float>(to_le(std::bit_cast<std::uint32_t>(f)));
        }
    }
}

}  // namespace tte::io
