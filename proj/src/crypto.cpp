#include "cen/crypto.hpp"

#include <sodium.h>

#include <stdexcept>

namespace cen {

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

}  // namespace

KeyPair keypair_from_seed(std::string key_id, const Bytes& seed32) {
    ensure_sodium();
    if (seed32.size() != crypto_sign_SEEDBYTES) {
        throw std::invalid_argument("keypair_from_seed: seed must be 32 bytes");
    }
    KeyPair kp;
    kp.key_id = std::move(key_id);
    kp.public_key.data.resize(crypto_sign_PUBLICKEYBYTES);
    kp.private_key.data.resize(crypto_sign_SECRETKEYBYTES);
    crypto_sign_seed_keypair(kp.public_key.data.data(), kp.private_key.data.data(),
                             seed32.data.data());
    return kp;
}

KeyPair random_keypair(std::string key_id) {
    ensure_sodium();
    KeyPair kp;
    kp.key_id = std::move(key_id);
    kp.public_key.data.resize(crypto_sign_PUBLICKEYBYTES);
    kp.private_key.data.resize(crypto_sign_SECRETKEYBYTES);
    crypto_sign_keypair(kp.public_key.data.data(), kp.private_key.data.data());
    return kp;
}

Bytes sign_detached(const KeyPair& key, std::span<const std::uint8_t> message) {
    ensure_sodium();
    if (key.private_key.size() != crypto_sign_SECRETKEYBYTES) {
        throw std::invalid_argument("sign_detached: key pair holds no private key");
    }
    Bytes sig;
    sig.data.resize(crypto_sign_BYTES);
    crypto_sign_detached(sig.data.data(), nullptr, message.data(), message.size(),
                         key.private_key.data.data());
    return sig;
}

bool verify_detached(const Bytes& public_key, std::span<const std::uint8_t> message,
                     const Bytes& signature) {
    ensure_sodium();
    if (public_key.size() != crypto_sign_PUBLICKEYBYTES || signature.size() != crypto_sign_BYTES) {
        return false;
    }
    return crypto_sign_verify_detached(signature.data.data(), message.data(), message.size(),
                                       public_key.data.data()) == 0;
}

Bytes sha256(std::span<const std::uint8_t> bytes) {
    ensure_sodium();
    Bytes out;
    out.data.resize(crypto_hash_sha256_BYTES);
    crypto_hash_sha256(out.data.data(), bytes.data(), bytes.size());
    return out;
}

Bytes derive_seed(std::uint64_t run_seed, std::string_view label) {
    std::string input;
    input.reserve(16 + label.size());
    for (int i = 0; i < 8; ++i) {
        input.push_back(static_cast<char>((run_seed >> (8 * i)) & 0xff));
    }
    input.push_back('\x1f');
    input.append(label);
    return sha256(input);
}

}  // namespace cen
