#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cen/crypto.hpp"
#include "cen/value.hpp"

namespace cen {

enum class PayloadType {
    claim_set,
    travel_rule_packet,
    receipt,
    endpoint_record,
    consent,
    attestation,
    log_checkpoint,
    message,  // control traffic; the payload carries its own "kind" field
};

std::string_view payload_type_name(PayloadType t);
std::optional<PayloadType> payload_type_from_name(std::string_view name);

/// Detached-signature wrapper around a canonical payload. The signature
/// covers (payload, payload_type, signer_id, signed_at), so envelope
/// metadata is tamper-evident along with the payload bytes.
struct SignedEnvelope {
    PayloadType payload_type = PayloadType::message;
    CanonicalBytes payload;
    std::string signer_id;
    Bytes signature;
    std::int64_t signed_at = 0;

    Value to_value() const;
    static Result<SignedEnvelope> from_value(const Value& record);

    /// Parsed payload; fails when the payload bytes are not strict canonical.
    Result<Value> payload_value() const { return parse_canonical(payload); }
};

SignedEnvelope sign_envelope(const KeyPair& key, PayloadType type, CanonicalBytes payload,
                             std::int64_t now_ms);

/// true/false for a well-formed envelope; MalformedEnvelope when fields are
/// missing or the payload bytes are not canonical.
Result<bool> verify_envelope(const SignedEnvelope& envelope, const Bytes& public_key);

/// Convenience wrapper treating malformed input as not verifying.
bool envelope_ok(const SignedEnvelope& envelope, const Bytes& public_key);

/// SHA-256 over the canonical record form; the identity used by receipts
/// and audit trails.
Bytes envelope_hash(const SignedEnvelope& envelope);

/// Resolves a signer id to its public key; empty when unknown.
using KeyLookup = std::function<std::optional<Bytes>(std::string_view key_id)>;

}  // namespace cen
