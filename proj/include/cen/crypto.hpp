#pragma once

#include <cstdint>
#include <string>

#include "cen/bytes.hpp"

namespace cen {

/// Ed25519 key pair. The private key stays inside the process: it is never
/// serialized into any wire message, log entry or exported file.
struct KeyPair {
    std::string key_id;
    Bytes public_key;   // 32 bytes
    Bytes private_key;  // 64 bytes (libsodium secret key layout)
};

/// Deterministic key derivation from a 32-byte seed.
KeyPair keypair_from_seed(std::string key_id, const Bytes& seed32);

/// Fresh random key pair (property tests and ad-hoc tooling).
KeyPair random_keypair(std::string key_id);

Bytes sign_detached(const KeyPair& key, std::span<const std::uint8_t> message);
inline Bytes sign_detached(const KeyPair& key, std::string_view message) {
    return sign_detached(key, std::span(reinterpret_cast<const std::uint8_t*>(message.data()),
                                        message.size()));
}

bool verify_detached(const Bytes& public_key, std::span<const std::uint8_t> message,
                     const Bytes& signature);
inline bool verify_detached(const Bytes& public_key, std::string_view message,
                            const Bytes& signature) {
    return verify_detached(public_key,
                           std::span(reinterpret_cast<const std::uint8_t*>(message.data()),
                                     message.size()),
                           signature);
}

Bytes sha256(std::span<const std::uint8_t> bytes);
inline Bytes sha256(std::string_view text) {
    return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// 32-byte seed derived from a run seed and a label, for reproducible keys
/// and nonces across runs.
Bytes derive_seed(std::uint64_t run_seed, std::string_view label);

}  // namespace cen
