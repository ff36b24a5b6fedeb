#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cen/audit_log.hpp"
#include "cen/data_provider.hpp"

namespace cen {

/// Bearer token binding a VASP to the algorithms it may request, signed by
/// the Authentication Service key.
struct AccessToken {
    std::string token_id;
    std::string vasp_id;
    std::vector<std::string> allowed_algos;
    std::int64_t issued_at = 0;
    std::int64_t expires_at = 0;
    SignedEnvelope envelope;

    Value to_value() const { return envelope.to_value(); }
    static Result<AccessToken> from_envelope(SignedEnvelope env);
};

/// Authenticates enrolled VASPs and issues scoped tokens. Co-located with a
/// claims provider but holding its own key pair.
class AuthService {
  public:
    AuthService(KeyPair key, std::int64_t token_ttl_ms)
        : key_(std::move(key)), token_ttl_ms_(token_ttl_ms) {}

    const std::string& service_id() const { return key_.key_id; }
    const Bytes& public_key() const { return key_.public_key; }

    void enroll_vasp(std::string vasp_id, std::string credential,
                     std::vector<std::string> entitled_algos);

    /// Token scope is the intersection of the request and the enrollment.
    Result<AccessToken> authenticate(std::string_view vasp_id, std::string_view credential,
                                     const std::vector<std::string>& requested_algos,
                                     std::int64_t now_ms);

    /// TokenInvalid / TokenExpired.
    Result<void> check_token(const AccessToken& token, std::string_view presenting_vasp,
                             std::int64_t now_ms) const;

  private:
    struct Enrollment {
        std::string credential;
        std::vector<std::string> entitled_algos;
    };

    KeyPair key_;
    std::int64_t token_ttl_ms_;
    std::uint64_t token_counter_ = 0;
    std::map<std::string, Enrollment> enrollments_;
};

struct Claim {
    std::string claim_id;
    std::string subject_id;
    Value::Map attributes;
    std::string text;  // lay-language rendering of the attributes
    std::vector<Provenance> provenance;
    std::int64_t issued_at = 0;
    std::int64_t expires_at = 0;

    Value to_value() const;
    static Result<Claim> from_value(const Value& record);
};

struct ClaimSet {
    std::vector<Claim> claims;
    std::string issuer_id;
    std::string request_id;
    std::string subject_id;
    SignedEnvelope envelope;

    Value to_value() const { return envelope.to_value(); }
    static Result<ClaimSet> from_envelope(SignedEnvelope env);
};

/// Per-subject store holding a copy of every claim set ever issued about the
/// subject by this provider. Content-addressed, so mirroring is idempotent.
class PersonalDataStore {
  public:
    explicit PersonalDataStore(std::string subject_id) : subject_id_(std::move(subject_id)) {}

    bool mirror(const ClaimSet& claimset);
    const std::vector<ClaimSet>& stored() const { return stored_; }
    const std::string& subject_id() const { return subject_id_; }

  private:
    std::string subject_id_;
    std::vector<ClaimSet> stored_;
    std::set<std::vector<std::uint8_t>> seen_;
};

struct ClaimsRequest {
    std::string request_id;
    std::string vasp_id;
    std::string subject_id;
    std::vector<std::string> algo_ids;
    AccessToken token;

    Value to_value() const;
    static Result<ClaimsRequest> from_value(const Value& record);
};

struct AlgoFailure {
    std::string algo_id;
    Error error;
};

struct ClaimsOutcome {
    std::optional<ClaimSet> claimset;
    std::vector<AlgoFailure> failures;
};

struct ClaimsProviderOptions {
    std::int64_t claim_ttl_ms = 30LL * 24 * 3600 * 1000;
    std::int64_t request_timeout_ms = 10'000;
    std::int64_t token_ttl_ms = 3600'000;
};

/// Collates data-provider responses into signed claims, mirrors every issued
/// set into the subject's store and retains a log copy.
class ClaimsProvider {
  public:
    using Options = ClaimsProviderOptions;

    ClaimsProvider(KeyPair cp_key, KeyPair as_key, const AlgorithmRegistry* registry,
                   KeyLookup keys, Options options = Options());

    const std::string& provider_id() const { return key_.key_id; }
    const Bytes& public_key() const { return key_.public_key; }
    AuthService& auth() { return auth_; }
    const AuthService& auth() const { return auth_; }
    const Options& options() const { return options_; }
    AuditLog& log() { return log_; }
    const AuditLog& log() const { return log_; }

    /// Stores a subject-signed consent; rejects envelopes that do not verify.
    Result<void> store_consent(const SignedEnvelope& consent_envelope);
    std::optional<ConsentRecord> find_consent(std::string_view subject_id,
                                              std::string_view algo_id) const;

    /// Routing table: which provider node serves an algorithm.
    void set_route(std::string algo_id, std::string provider_node);
    std::optional<std::string> route(std::string_view algo_id) const;

    struct PlannedExecution {
        std::string algo_id;
        const AlgorithmDescriptor* descriptor = nullptr;  // null when admission failed
        std::optional<ConsentRecord> consent;
        std::optional<Error> admission_error;
    };

    /// Token, scope and listing checks. Request-level failures surface as
    /// errors; per-algorithm admission failures ride along in the plan.
    Result<std::vector<PlannedExecution>> admit(const ClaimsRequest& request, std::int64_t now_ms);

    /// Builds a signed claim set from execution results, mirrors it and logs
    /// it. AllAlgorithmsFailed when nothing succeeded.
    Result<ClaimsOutcome> collate(const ClaimsRequest& request,
                                  const std::vector<std::pair<std::string, Result<AlgoResponse>>>&
                                      results,
                                  std::int64_t now_ms);

    /// Full request path with a caller-supplied executor, for in-process use.
    Result<ClaimsOutcome> handle_request(
        const ClaimsRequest& request,
        const std::function<Result<AlgoResponse>(const PlannedExecution&)>& executor,
        std::int64_t now_ms);

    Result<void> mirror_to_pds(const ClaimSet& claimset);
    const PersonalDataStore* pds(std::string_view subject_id) const;
    const std::map<std::string, PersonalDataStore>& stores() const { return pds_; }

  private:
    KeyPair key_;
    AuthService auth_;
    const AlgorithmRegistry* registry_;
    KeyLookup keys_;
    Options options_;
    AuditLog log_;
    std::map<std::pair<std::string, std::string>, ConsentRecord> consents_;
    std::map<std::string, std::string> routes_;
    std::map<std::string, PersonalDataStore> pds_;
};

}  // namespace cen
