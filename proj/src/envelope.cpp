#include "cen/envelope.hpp"

#include <array>
#include <utility>

namespace cen {

namespace {

constexpr std::array<std::pair<PayloadType, std::string_view>, 8> kPayloadNames{{
    {PayloadType::claim_set, "claim_set"},
    {PayloadType::travel_rule_packet, "travel_rule_packet"},
    {PayloadType::receipt, "receipt"},
    {PayloadType::endpoint_record, "endpoint_record"},
    {PayloadType::consent, "consent"},
    {PayloadType::attestation, "attestation"},
    {PayloadType::log_checkpoint, "log_checkpoint"},
    {PayloadType::message, "message"},
}};

Value signing_input(PayloadType type, const CanonicalBytes& payload, std::string_view signer_id,
                    std::int64_t signed_at) {
    return Value::map({
        {"payload", Bytes(payload)},
        {"payload_type", payload_type_name(type)},
        {"signed_at", signed_at},
        {"signer_id", std::string(signer_id)},
    });
}

}  // namespace

std::string_view payload_type_name(PayloadType t) {
    for (const auto& [type, name] : kPayloadNames) {
        if (type == t) return name;
    }
    return "unknown";
}

std::optional<PayloadType> payload_type_from_name(std::string_view name) {
    for (const auto& [type, n] : kPayloadNames) {
        if (n == name) return type;
    }
    return std::nullopt;
}

Value SignedEnvelope::to_value() const {
    Value v = signing_input(payload_type, payload, signer_id, signed_at);
    v.set("signature", signature);
    return v;
}

Result<SignedEnvelope> SignedEnvelope::from_value(const Value& record) {
    SignedEnvelope env;
    auto type_name = get_string(record, "payload_type");
    if (!type_name.ok()) return make_error(ErrorCode::malformed_envelope, "missing payload_type");
    auto type = payload_type_from_name(type_name.value());
    if (!type) return make_error(ErrorCode::malformed_envelope, "unknown payload_type");
    env.payload_type = *type;

    auto payload = get_bytes(record, "payload");
    if (!payload.ok()) return make_error(ErrorCode::malformed_envelope, "missing payload");
    env.payload.assign(payload.value().data.begin(), payload.value().data.end());

    auto signer = get_string(record, "signer_id");
    if (!signer.ok()) return make_error(ErrorCode::malformed_envelope, "missing signer_id");
    env.signer_id = signer.value();

    auto sig = get_bytes(record, "signature");
    if (!sig.ok()) return make_error(ErrorCode::malformed_envelope, "missing signature");
    env.signature = sig.value();

    auto at = get_int(record, "signed_at");
    if (!at.ok()) return make_error(ErrorCode::malformed_envelope, "missing signed_at");
    env.signed_at = at.value();

    return env;
}

SignedEnvelope sign_envelope(const KeyPair& key, PayloadType type, CanonicalBytes payload,
                             std::int64_t now_ms) {
    SignedEnvelope env;
    env.payload_type = type;
    env.payload = std::move(payload);
    env.signer_id = key.key_id;
    env.signed_at = now_ms;
    CanonicalBytes input = must_canonicalize(signing_input(type, env.payload, env.signer_id, now_ms));
    env.signature = sign_detached(key, input);
    return env;
}

Result<bool> verify_envelope(const SignedEnvelope& envelope, const Bytes& public_key) {
    if (envelope.signer_id.empty()) {
        return make_error(ErrorCode::malformed_envelope, "empty signer_id");
    }
    if (envelope.signature.empty()) {
        return make_error(ErrorCode::malformed_envelope, "empty signature");
    }
    if (!parse_canonical(envelope.payload).ok()) {
        return make_error(ErrorCode::malformed_envelope, "payload is not in canonical form");
    }
    auto input = canonicalize(
        signing_input(envelope.payload_type, envelope.payload, envelope.signer_id,
                      envelope.signed_at));
    if (!input.ok()) {
        return make_error(ErrorCode::malformed_envelope, input.error().detail);
    }
    return verify_detached(public_key, input.value(), envelope.signature);
}

bool envelope_ok(const SignedEnvelope& envelope, const Bytes& public_key) {
    auto r = verify_envelope(envelope, public_key);
    return r.ok() && r.value();
}

Bytes envelope_hash(const SignedEnvelope& envelope) {
    return sha256(must_canonicalize(envelope.to_value()));
}

}  // namespace cen
