#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cen/result.hpp"

namespace cen {

/// Owned byte string, kept distinct from text so the wire encoder can tell
/// binary fields (base64url) apart from UTF-8 strings.
struct Bytes {
    std::vector<std::uint8_t> data;

    Bytes() = default;
    explicit Bytes(std::vector<std::uint8_t> d) : data(std::move(d)) {}
    explicit Bytes(std::string_view s) : data(s.begin(), s.end()) {}

    static Bytes zeros(std::size_t n) { return Bytes(std::vector<std::uint8_t>(n, 0)); }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    std::span<const std::uint8_t> span() const { return data; }

    auto operator<=>(const Bytes&) const = default;
};

std::string base64url_encode(std::span<const std::uint8_t> bytes);
inline std::string base64url_encode(const Bytes& b) { return base64url_encode(b.span()); }

/// Strict decode: rejects padding, whitespace and non-alphabet characters.
Result<Bytes> base64url_decode(std::string_view text);

std::string hex_encode(std::span<const std::uint8_t> bytes);

}  // namespace cen
