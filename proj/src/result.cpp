#include "cen/result.hpp"

#include <array>
#include <utility>

namespace cen {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 37> kNames{{
    {ErrorCode::unsupported_type, "UnsupportedType"},
    {ErrorCode::parse_error, "ParseError"},
    {ErrorCode::malformed_envelope, "MalformedEnvelope"},
    {ErrorCode::invalid_envelope, "InvalidEnvelope"},
    {ErrorCode::bad_signature, "BadSignature"},
    {ErrorCode::duplicate_algorithm, "DuplicateAlgorithm"},
    {ErrorCode::vetting_required, "VettingRequired"},
    {ErrorCode::unknown_algorithm, "UnknownAlgorithm"},
    {ErrorCode::schema_mismatch, "SchemaMismatch"},
    {ErrorCode::consent_missing, "ConsentMissing"},
    {ErrorCode::consent_expired, "ConsentExpired"},
    {ErrorCode::aggregate_too_small, "AggregateTooSmall"},
    {ErrorCode::no_subject_data, "NoSubjectData"},
    {ErrorCode::unknown_vasp, "UnknownVasp"},
    {ErrorCode::bad_credential, "BadCredential"},
    {ErrorCode::no_entitled_algorithms, "NoEntitledAlgorithms"},
    {ErrorCode::token_invalid, "TokenInvalid"},
    {ErrorCode::token_expired, "TokenExpired"},
    {ErrorCode::scope_exceeded, "ScopeExceeded"},
    {ErrorCode::all_algorithms_failed, "AllAlgorithmsFailed"},
    {ErrorCode::possession_failed, "PossessionFailed"},
    {ErrorCode::enrollment_missing, "EnrollmentMissing"},
    {ErrorCode::nonce_replayed, "NonceReplayed"},
    {ErrorCode::stale_record, "StaleRecord"},
    {ErrorCode::not_found, "NotFound"},
    {ErrorCode::unknown_customer, "UnknownCustomer"},
    {ErrorCode::claims_unavailable, "ClaimsUnavailable"},
    {ErrorCode::signature_invalid, "SignatureInvalid"},
    {ErrorCode::ownership_unattested, "OwnershipUnattested"},
    {ErrorCode::untrusted_root, "UntrustedRoot"},
    {ErrorCode::attestation_expired, "AttestationExpired"},
    {ErrorCode::incomplete_packet, "IncompletePacket"},
    {ErrorCode::receipt_missing, "ReceiptMissing"},
    {ErrorCode::policy_blocked, "PolicyBlocked"},
    {ErrorCode::receipt_invalid, "ReceiptInvalid"},
    {ErrorCode::config_invalid, "ConfigInvalid"},
    {ErrorCode::invalid_argument, "InvalidArgument"},
}};

}  // namespace

std::string_view error_code_name(ErrorCode code) {
    for (const auto& [c, name] : kNames) {
        if (c == code) return name;
    }
    return "UnknownError";
}

std::optional<ErrorCode> error_code_from_name(std::string_view name) {
    for (const auto& [c, n] : kNames) {
        if (n == name) return c;
    }
    return std::nullopt;
}

}  // namespace cen
