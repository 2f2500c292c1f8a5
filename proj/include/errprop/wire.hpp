#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace errprop {

// Big-endian fixed-width integer encoding used by all protocol payloads.

inline void put_u64(std::vector<std::byte>& out, std::uint64_t v)
{
    for (int shift = 56; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::byte>((v >> shift) & 0xffu));
}

inline void put_u32(std::vector<std::byte>& out, std::uint32_t v)
{
    for (int shift = 24; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::byte>((v >> shift) & 0xffu));
}

inline std::uint64_t get_u64(std::span<const std::byte> in, std::size_t offset = 0)
{
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i)
        v = (v << 8) | static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(in[offset + i]));
    return v;
}

inline std::uint32_t get_u32(std::span<const std::byte> in, std::size_t offset = 0)
{
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i)
        v = (v << 8) | static_cast<std::uint32_t>(std::to_integer<std::uint8_t>(in[offset + i]));
    return v;
}

inline std::vector<std::byte> encode_u64(std::uint64_t v)
{
    std::vector<std::byte> out;
    out.reserve(8);
    put_u64(out, v);
    return out;
}

inline std::vector<std::byte> bytes_of(std::string_view s)
{
    std::vector<std::byte> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        out[i] = static_cast<std::byte>(s[i]);
    return out;
}

inline std::string string_of(std::span<const std::byte> b)
{
    std::string out(b.size(), '\0');
    for (std::size_t i = 0; i < b.size(); ++i)
        out[i] = static_cast<char>(std::to_integer<unsigned char>(b[i]));
    return out;
}

} // namespace errprop
