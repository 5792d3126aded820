#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>

#include "rcsim/bytes.hpp"
#include "rcsim/sha256.hpp"

namespace rcsim {

/// 32-byte hash value. Equal inputs produce equal digests; the simulation
/// treats the hash as collision-free.
struct Digest {
    std::array<std::uint8_t, 32> bytes{};

    auto operator<=>(const Digest&) const = default;

    std::string hex() const { return to_hex(bytes.data(), bytes.size()); }
    std::string short_hex() const { return hex().substr(0, 12); }
};

inline Digest hash_bytes(const void* data, std::size_t len) {
    return Digest{Sha256::hash(data, len)};
}

inline Digest hash_bytes(const Bytes& b) { return hash_bytes(b.data(), b.size()); }

inline Digest hash_string(std::string_view s) { return hash_bytes(s.data(), s.size()); }

}  // namespace rcsim
