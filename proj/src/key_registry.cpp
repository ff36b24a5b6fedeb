#include "cen/key_registry.hpp"

namespace cen {

Value AttestationLink::to_value() const {
    Value v = Value::map({
        {"attested_key", attested_key},
        {"kind", kind},
        {"subject", subject},
        {"valid_from", valid_from},
        {"valid_to", valid_to},
    });
    if (!custodian_vasp_id.empty()) v.set("custodian_vasp_id", custodian_vasp_id);
    return v;
}

Result<AttestationLink> AttestationLink::from_envelope(const SignedEnvelope& env) {
    if (env.payload_type != PayloadType::attestation) {
        return make_error(ErrorCode::parse_error, "not an attestation envelope");
    }
    CEN_TRY(payload, env.payload_value());
    AttestationLink link;
    CEN_TRY(kind, get_string(payload, "kind"));
    link.kind = kind;
    CEN_TRY(subject, get_string(payload, "subject"));
    link.subject = subject;
    CEN_TRY(key, get_bytes(payload, "attested_key"));
    link.attested_key = key;
    CEN_TRY(from, get_int(payload, "valid_from"));
    link.valid_from = from;
    CEN_TRY(to, get_int(payload, "valid_to"));
    link.valid_to = to;
    if (payload.find("custodian_vasp_id") != nullptr) {
        CEN_TRY(vasp, get_string(payload, "custodian_vasp_id"));
        link.custodian_vasp_id = vasp;
    }
    return link;
}

namespace {

Value chain_to_value(const std::vector<SignedEnvelope>& chain) {
    Value::List out;
    for (const auto& env : chain) out.push_back(env.to_value());
    return Value(std::move(out));
}

Result<std::vector<SignedEnvelope>> chain_from_value(const Value& record, std::string_view key) {
    CEN_TRY(items, get_list(record, key));
    std::vector<SignedEnvelope> chain;
    chain.reserve(items->size());
    for (const auto& item : *items) {
        CEN_TRY(env, SignedEnvelope::from_value(item));
        chain.push_back(env);
    }
    return chain;
}

}  // namespace

Value KeyOwnershipAttestation::to_value() const {
    return Value::map({
        {"chain", chain_to_value(chain)},
        {"public_key", public_key},
        {"subject_id", subject_id},
        {"valid_from", valid_from},
        {"valid_to", valid_to},
    });
}

Result<KeyOwnershipAttestation> KeyOwnershipAttestation::from_value(const Value& record) {
    KeyOwnershipAttestation a;
    CEN_TRY(subject, get_string(record, "subject_id"));
    a.subject_id = subject;
    CEN_TRY(key, get_bytes(record, "public_key"));
    a.public_key = key;
    CEN_TRY(chain, chain_from_value(record, "chain"));
    a.chain = chain;
    CEN_TRY(from, get_int(record, "valid_from"));
    a.valid_from = from;
    CEN_TRY(to, get_int(record, "valid_to"));
    a.valid_to = to;
    return a;
}

Value CustodyAttestation::to_value() const {
    return Value::map({
        {"chain", chain_to_value(chain)},
        {"public_key", public_key},
        {"subject_id", subject_id},
        {"vasp_id", vasp_id},
    });
}

Result<CustodyAttestation> CustodyAttestation::from_value(const Value& record) {
    CustodyAttestation a;
    CEN_TRY(vasp, get_string(record, "vasp_id"));
    a.vasp_id = vasp;
    CEN_TRY(subject, get_string(record, "subject_id"));
    a.subject_id = subject;
    CEN_TRY(key, get_bytes(record, "public_key"));
    a.public_key = key;
    CEN_TRY(chain, chain_from_value(record, "chain"));
    a.chain = chain;
    return a;
}

CanonicalBytes possession_signing_input(const PossessionChallenge& challenge) {
    return must_canonicalize(Value::map({
        {"issued_at", challenge.issued_at},
        {"nonce", challenge.nonce},
    }));
}

Result<void> check_chain(const std::vector<SignedEnvelope>& chain, const TrustedRoots& roots,
                         std::int64_t now_ms) {
    if (chain.size() < 2) {
        return make_error(ErrorCode::ownership_unattested,
                          "attestation chain shorter than two links");
    }
    // Top link must be signed by a configured root.
    const SignedEnvelope& top = chain.back();
    const Bytes* root_key = nullptr;
    for (const auto& root : roots) {
        if (root.root_id == top.signer_id) {
            root_key = &root.public_key;
            break;
        }
    }
    if (root_key == nullptr) {
        return make_error(ErrorCode::untrusted_root,
                          "chain terminates at '" + top.signer_id + "'");
    }
    if (!envelope_ok(top, *root_key)) {
        return make_error(ErrorCode::bad_signature, "root link does not verify");
    }
    CEN_TRY(top_link, AttestationLink::from_envelope(top));
    if (now_ms < top_link.valid_from || now_ms >= top_link.valid_to) {
        return make_error(ErrorCode::attestation_expired, "root link outside validity window");
    }
    // Walk down: link i must be signed by the holder attested in link i+1.
    AttestationLink above = top_link;
    for (std::size_t i = chain.size() - 1; i-- > 0;) {
        const SignedEnvelope& env = chain[i];
        if (env.signer_id != above.subject) {
            return make_error(ErrorCode::bad_signature,
                              "link signer '" + env.signer_id + "' is not the attested holder");
        }
        if (!envelope_ok(env, above.attested_key)) {
            return make_error(ErrorCode::bad_signature, "chain link does not verify");
        }
        CEN_TRY(link, AttestationLink::from_envelope(env));
        if (now_ms < link.valid_from || now_ms >= link.valid_to) {
            return make_error(ErrorCode::attestation_expired, "link outside validity window");
        }
        above = link;
    }
    return ok();
}

Result<void> check_ownership(const KeyOwnershipAttestation& attestation, const TrustedRoots& roots,
                             std::int64_t now_ms) {
    CEN_CHECK_OK(check_chain(attestation.chain, roots, now_ms));
    CEN_TRY(leaf, AttestationLink::from_envelope(attestation.chain.front()));
    if (leaf.kind != "ownership" || leaf.subject != attestation.subject_id ||
        leaf.attested_key != attestation.public_key) {
        return make_error(ErrorCode::ownership_unattested, "leaf does not bind subject to key");
    }
    if (now_ms < attestation.valid_from || now_ms >= attestation.valid_to) {
        return make_error(ErrorCode::attestation_expired, "attestation outside validity window");
    }
    return ok();
}

bool verify_ownership(const KeyOwnershipAttestation& attestation, const TrustedRoots& roots,
                      std::int64_t now_ms) {
    return check_ownership(attestation, roots, now_ms).ok();
}

Result<void> check_custody(const CustodyAttestation& attestation, const TrustedRoots& roots,
                           std::int64_t now_ms) {
    CEN_CHECK_OK(check_chain(attestation.chain, roots, now_ms));
    CEN_TRY(leaf, AttestationLink::from_envelope(attestation.chain.front()));
    if (leaf.kind != "custody" || leaf.subject != attestation.subject_id ||
        leaf.attested_key != attestation.public_key ||
        leaf.custodian_vasp_id != attestation.vasp_id) {
        return make_error(ErrorCode::ownership_unattested,
                          "custody leaf does not bind custodian, subject and key");
    }
    return ok();
}

KeyRegistry::KeyRegistry(KeyPair key, Bytes nonce_seed, std::int64_t attestation_ttl_ms)
    : key_(std::move(key)), nonce_seed_(std::move(nonce_seed)),
      attestation_ttl_ms_(attestation_ttl_ms) {}

void KeyRegistry::enroll(std::string subject_id, Bytes public_key) {
    enrollments_.insert_or_assign(std::move(subject_id), std::move(public_key));
}

bool KeyRegistry::enrolled(std::string_view subject_id, const Bytes& public_key) const {
    auto it = enrollments_.find(std::string(subject_id));
    return it != enrollments_.end() && it->second == public_key;
}

Bytes KeyRegistry::next_nonce() {
    std::string input(nonce_seed_.data.begin(), nonce_seed_.data.end());
    input += ":nonce:";
    input += std::to_string(nonce_counter_++);
    return sha256(input);
}

PossessionChallenge KeyRegistry::issue_challenge(const Bytes& target_public_key,
                                                 std::int64_t now_ms) {
    return PossessionChallenge{next_nonce(), now_ms, target_public_key};
}

Result<bool> KeyRegistry::complete_challenge(const PossessionChallenge& challenge,
                                             const Bytes& signature) {
    if (!used_nonces_.insert(challenge.nonce.data).second) {
        return make_error(ErrorCode::nonce_replayed, "nonce already consumed");
    }
    return verify_detached(challenge.target_public_key, possession_signing_input(challenge),
                           signature);
}

Result<bool> KeyRegistry::challenge_possession(const Bytes& target_public_key,
                                               const ChallengeResponder& responder,
                                               std::int64_t now_ms) {
    PossessionChallenge challenge = issue_challenge(target_public_key, now_ms);
    Bytes signature = responder(challenge);
    return complete_challenge(challenge, signature);
}

Result<void> KeyRegistry::consume_proof(const Bytes& public_key, const PossessionProof& proof) {
    if (proof.challenge.target_public_key != public_key) {
        return make_error(ErrorCode::possession_failed, "proof targets a different key");
    }
    CEN_TRY(passed, complete_challenge(proof.challenge, proof.signature));
    if (!passed) {
        return make_error(ErrorCode::possession_failed, "challenge signature does not verify");
    }
    return ok();
}

Result<KeyOwnershipAttestation> KeyRegistry::issue_ownership(std::string_view subject_id,
                                                             const Bytes& public_key,
                                                             const PossessionProof& proof,
                                                             std::int64_t now_ms) {
    CEN_CHECK_OK(consume_proof(public_key, proof));
    if (!enrolled(subject_id, public_key)) {
        return make_error(ErrorCode::enrollment_missing,
                          "no enrollment record links '" + std::string(subject_id) +
                              "' to this key");
    }
    AttestationLink leaf;
    leaf.kind = "ownership";
    leaf.subject = std::string(subject_id);
    leaf.attested_key = public_key;
    leaf.valid_from = now_ms;
    leaf.valid_to = now_ms + attestation_ttl_ms_;

    KeyOwnershipAttestation attestation;
    attestation.subject_id = leaf.subject;
    attestation.public_key = public_key;
    attestation.valid_from = leaf.valid_from;
    attestation.valid_to = leaf.valid_to;
    attestation.chain.push_back(sign_envelope(key_, PayloadType::attestation,
                                              must_canonicalize(leaf.to_value()), now_ms));
    for (const auto& link : authority_chain_) attestation.chain.push_back(link);
    return attestation;
}

Result<CustodyAttestation> KeyRegistry::issue_custody(std::string_view vasp_id,
                                                      std::string_view subject_id,
                                                      const Bytes& public_key,
                                                      const PossessionProof& proof,
                                                      std::int64_t now_ms) {
    CEN_CHECK_OK(consume_proof(public_key, proof));
    if (!enrolled(subject_id, public_key)) {
        return make_error(ErrorCode::enrollment_missing,
                          "no enrollment record links '" + std::string(subject_id) +
                              "' to this key");
    }
    AttestationLink leaf;
    leaf.kind = "custody";
    leaf.subject = std::string(subject_id);
    leaf.attested_key = public_key;
    leaf.valid_from = now_ms;
    leaf.valid_to = now_ms + attestation_ttl_ms_;
    leaf.custodian_vasp_id = std::string(vasp_id);

    CustodyAttestation attestation;
    attestation.vasp_id = leaf.custodian_vasp_id;
    attestation.subject_id = leaf.subject;
    attestation.public_key = public_key;
    attestation.chain.push_back(sign_envelope(key_, PayloadType::attestation,
                                              must_canonicalize(leaf.to_value()), now_ms));
    for (const auto& link : authority_chain_) attestation.chain.push_back(link);
    return attestation;
}

SignedEnvelope sign_authority_link(const KeyPair& issuer, std::string_view holder_id,
                                   const Bytes& holder_key, std::int64_t valid_from,
                                   std::int64_t valid_to, std::int64_t now_ms) {
    AttestationLink link;
    link.kind = "authority";
    link.subject = std::string(holder_id);
    link.attested_key = holder_key;
    link.valid_from = valid_from;
    link.valid_to = valid_to;
    return sign_envelope(issuer, PayloadType::attestation, must_canonicalize(link.to_value()),
                         now_ms);
}

}  // namespace cen
