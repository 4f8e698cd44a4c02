#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace counseval::binio {

// Explicit little-endian writers so model files are byte-identical across
// platforms and runs.

inline void write_u8(std::ostream& out, std::uint8_t v) {
    out.put(static_cast<char>(v));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

inline void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint8_t read_u8(std::istream& in) {
    int c = in.get();
    if (c == EOF) throw std::runtime_error("unexpected end of file");
    return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& in) {
    char b[4];
    if (!in.read(b, 4)) throw std::runtime_error("unexpected end of file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& in) {
    char b[8];
    if (!in.read(b, 8)) throw std::runtime_error("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline double read_f64(std::istream& in) {
    std::uint64_t bits = read_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string read_string(std::istream& in) {
    std::uint32_t n = read_u32(in);
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) throw std::runtime_error("unexpected end of file");
    return s;
}

inline void expect_magic(std::istream& in, const std::string& magic) {
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(magic.size())) || got != magic)
        throw std::runtime_error("bad file magic: expected " + magic);
}

} // namespace counseval::binio
