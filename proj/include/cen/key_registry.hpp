#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cen/envelope.hpp"

namespace cen {

/// One link in an attestation chain. The leaf binds a subject to a key; each
/// following link attests the previous signer's key, up to a trusted root.
struct AttestationLink {
    std::string kind;  // "ownership" | "custody" | "authority"
    std::string subject;
    Bytes attested_key;
    std::int64_t valid_from = 0;
    std::int64_t valid_to = 0;
    std::string custodian_vasp_id;  // custody leaves only

    Value to_value() const;
    static Result<AttestationLink> from_envelope(const SignedEnvelope& env);
};

/// Chain-of-provenance evidence that a subject legally owns a key pair.
/// Possession of the private key alone never yields one of these.
struct KeyOwnershipAttestation {
    std::string subject_id;
    Bytes public_key;
    std::vector<SignedEnvelope> chain;  // leaf first
    std::int64_t valid_from = 0;
    std::int64_t valid_to = 0;

    Value to_value() const;
    static Result<KeyOwnershipAttestation> from_value(const Value& record);
};

/// Evidence that a VASP holds and operates a customer's key pair.
struct CustodyAttestation {
    std::string vasp_id;
    std::string subject_id;
    Bytes public_key;
    std::vector<SignedEnvelope> chain;  // custody leaf first

    Value to_value() const;
    static Result<CustodyAttestation> from_value(const Value& record);
};

struct PossessionChallenge {
    Bytes nonce;
    std::int64_t issued_at = 0;
    Bytes target_public_key;
};

/// The byte string a challenge responder must sign.
CanonicalBytes possession_signing_input(const PossessionChallenge& challenge);

/// Signs challenges on behalf of whoever holds the private key.
using ChallengeResponder = std::function<Bytes(const PossessionChallenge&)>;

struct TrustedRoot {
    std::string root_id;
    Bytes public_key;
};
using TrustedRoots = std::vector<TrustedRoot>;

/// Chain walk shared by ownership and custody checks: every link verifies,
/// the top link is signed by a trusted root, validity windows contain now.
Result<void> check_chain(const std::vector<SignedEnvelope>& chain, const TrustedRoots& roots,
                         std::int64_t now_ms);

Result<void> check_ownership(const KeyOwnershipAttestation& attestation, const TrustedRoots& roots,
                             std::int64_t now_ms);
bool verify_ownership(const KeyOwnershipAttestation& attestation, const TrustedRoots& roots,
                      std::int64_t now_ms);

Result<void> check_custody(const CustodyAttestation& attestation, const TrustedRoots& roots,
                           std::int64_t now_ms);

/// Registry service: runs possession challenges and issues attestations.
/// Ownership requires both a fresh possession proof and an enrollment record
/// linking the subject to the key.
class KeyRegistry {
  public:
    KeyRegistry(KeyPair key, Bytes nonce_seed, std::int64_t attestation_ttl_ms);

    const std::string& registry_id() const { return key_.key_id; }
    const Bytes& public_key() const { return key_.public_key; }

    /// Authority links covering this registry's key, signed down from a root.
    void set_authority_chain(std::vector<SignedEnvelope> links) {
        authority_chain_ = std::move(links);
    }
    const std::vector<SignedEnvelope>& authority_chain() const { return authority_chain_; }

    void enroll(std::string subject_id, Bytes public_key);
    bool enrolled(std::string_view subject_id, const Bytes& public_key) const;

    PossessionChallenge issue_challenge(const Bytes& target_public_key, std::int64_t now_ms);

    /// Consumes the nonce either way; NonceReplayed on a second presentation.
    Result<bool> complete_challenge(const PossessionChallenge& challenge, const Bytes& signature);

    /// One-shot challenge/response round against the given responder.
    Result<bool> challenge_possession(const Bytes& target_public_key,
                                      const ChallengeResponder& responder, std::int64_t now_ms);

    struct PossessionProof {
        PossessionChallenge challenge;
        Bytes signature;
    };

    Result<KeyOwnershipAttestation> issue_ownership(std::string_view subject_id,
                                                    const Bytes& public_key,
                                                    const PossessionProof& proof,
                                                    std::int64_t now_ms);

    Result<CustodyAttestation> issue_custody(std::string_view vasp_id, std::string_view subject_id,
                                             const Bytes& public_key, const PossessionProof& proof,
                                             std::int64_t now_ms);

  private:
    Result<void> consume_proof(const Bytes& public_key, const PossessionProof& proof);
    Bytes next_nonce();

    KeyPair key_;
    Bytes nonce_seed_;
    std::int64_t attestation_ttl_ms_;
    std::uint64_t nonce_counter_ = 0;
    std::vector<SignedEnvelope> authority_chain_;
    std::map<std::string, Bytes> enrollments_;
    std::set<std::vector<std::uint8_t>> used_nonces_;
};

/// Root-side helper: signs an authority link attesting `holder`'s key.
SignedEnvelope sign_authority_link(const KeyPair& issuer, std::string_view holder_id,
                                   const Bytes& holder_key, std::int64_t valid_from,
                                   std::int64_t valid_to, std::int64_t now_ms);

}  // namespace cen
