#include "cen/claims_provider.hpp"

#include <algorithm>

namespace cen {

Result<AccessToken> AccessToken::from_envelope(SignedEnvelope env) {
    CEN_TRY(payload, env.payload_value());
    AccessToken token;
    CEN_TRY(id, get_string(payload, "token_id"));
    token.token_id = id;
    CEN_TRY(vasp, get_string(payload, "vasp_id"));
    token.vasp_id = vasp;
    CEN_TRY(algos, get_string_list(payload, "allowed_algos"));
    token.allowed_algos = algos;
    CEN_TRY(issued, get_int(payload, "issued_at"));
    token.issued_at = issued;
    CEN_TRY(expires, get_int(payload, "expires_at"));
    token.expires_at = expires;
    token.envelope = std::move(env);
    return token;
}

void AuthService::enroll_vasp(std::string vasp_id, std::string credential,
                              std::vector<std::string> entitled_algos) {
    enrollments_.insert_or_assign(std::move(vasp_id),
                                  Enrollment{std::move(credential), std::move(entitled_algos)});
}

Result<AccessToken> AuthService::authenticate(std::string_view vasp_id,
                                              std::string_view credential,
                                              const std::vector<std::string>& requested_algos,
                                              std::int64_t now_ms) {
    auto it = enrollments_.find(std::string(vasp_id));
    if (it == enrollments_.end()) {
        return make_error(ErrorCode::unknown_vasp, std::string(vasp_id));
    }
    if (it->second.credential != credential) {
        return make_error(ErrorCode::bad_credential, "credential mismatch");
    }
    std::vector<std::string> scope;
    for (const auto& algo : requested_algos) {
        if (std::find(it->second.entitled_algos.begin(), it->second.entitled_algos.end(), algo) !=
            it->second.entitled_algos.end()) {
            scope.push_back(algo);
        }
    }
    std::sort(scope.begin(), scope.end());
    scope.erase(std::unique(scope.begin(), scope.end()), scope.end());
    if (scope.empty()) {
        return make_error(ErrorCode::no_entitled_algorithms,
                          "no requested algorithm is entitled");
    }
    AccessToken token;
    token.token_id = key_.key_id + "-tok" + std::to_string(token_counter_++);
    token.vasp_id = std::string(vasp_id);
    token.allowed_algos = std::move(scope);
    token.issued_at = now_ms;
    token.expires_at = now_ms + token_ttl_ms_;
    auto payload = must_canonicalize(Value::map({
        {"allowed_algos", Value::list_of(token.allowed_algos)},
        {"expires_at", token.expires_at},
        {"issued_at", token.issued_at},
        {"kind", "access_token"},
        {"token_id", token.token_id},
        {"vasp_id", token.vasp_id},
    }));
    token.envelope = sign_envelope(key_, PayloadType::message, std::move(payload), now_ms);
    return token;
}

Result<void> AuthService::check_token(const AccessToken& token, std::string_view presenting_vasp,
                                      std::int64_t now_ms) const {
    if (token.envelope.signer_id != key_.key_id || !envelope_ok(token.envelope, key_.public_key)) {
        return make_error(ErrorCode::token_invalid, "token signature does not verify");
    }
    // Fields must match the signed payload, not just the carried copies.
    auto reparsed = AccessToken::from_envelope(token.envelope);
    if (!reparsed.ok() || reparsed.value().vasp_id != token.vasp_id ||
        reparsed.value().allowed_algos != token.allowed_algos ||
        reparsed.value().expires_at != token.expires_at) {
        return make_error(ErrorCode::token_invalid, "token fields diverge from signed payload");
    }
    if (token.vasp_id != presenting_vasp) {
        return make_error(ErrorCode::token_invalid, "token issued to a different VASP");
    }
    if (now_ms >= token.expires_at) {
        return make_error(ErrorCode::token_expired,
                          "expired at " + std::to_string(token.expires_at));
    }
    return ok();
}

Value Claim::to_value() const {
    Value::List prov;
    for (const auto& p : provenance) prov.push_back(p.to_value());
    return Value::map({
        {"attributes", Value(attributes)},
        {"claim_id", claim_id},
        {"expires_at", expires_at},
        {"issued_at", issued_at},
        {"provenance", Value(std::move(prov))},
        {"subject_id", subject_id},
        {"text", text},
    });
}

Result<Claim> Claim::from_value(const Value& record) {
    Claim c;
    CEN_TRY(id, get_string(record, "claim_id"));
    c.claim_id = id;
    CEN_TRY(subject, get_string(record, "subject_id"));
    c.subject_id = subject;
    CEN_TRY(attrs, get_map(record, "attributes"));
    c.attributes = *attrs;
    CEN_TRY(text, get_string(record, "text"));
    c.text = text;
    CEN_TRY(prov_list, get_list(record, "provenance"));
    for (const auto& item : *prov_list) {
        CEN_TRY(p, Provenance::from_value(item));
        c.provenance.push_back(p);
    }
    CEN_TRY(issued, get_int(record, "issued_at"));
    c.issued_at = issued;
    CEN_TRY(expires, get_int(record, "expires_at"));
    c.expires_at = expires;
    if (c.provenance.empty()) {
        return make_error(ErrorCode::parse_error, "claim has empty provenance");
    }
    if (c.expires_at <= c.issued_at) {
        return make_error(ErrorCode::parse_error, "claim expires before issuance");
    }
    return c;
}

Result<ClaimSet> ClaimSet::from_envelope(SignedEnvelope env) {
    if (env.payload_type != PayloadType::claim_set) {
        return make_error(ErrorCode::parse_error, "not a claim_set envelope");
    }
    CEN_TRY(payload, env.payload_value());
    ClaimSet cs;
    CEN_TRY(issuer, get_string(payload, "issuer_id"));
    cs.issuer_id = issuer;
    CEN_TRY(request, get_string(payload, "request_id"));
    cs.request_id = request;
    CEN_TRY(subject, get_string(payload, "subject_id"));
    cs.subject_id = subject;
    CEN_TRY(claims, get_list(payload, "claims"));
    for (const auto& item : *claims) {
        CEN_TRY(claim, Claim::from_value(item));
        cs.claims.push_back(claim);
    }
    cs.envelope = std::move(env);
    return cs;
}

bool PersonalDataStore::mirror(const ClaimSet& claimset) {
    Bytes key = sha256(claimset.envelope.payload);
    if (!seen_.insert(key.data).second) return false;
    stored_.push_back(claimset);
    return true;
}

Value ClaimsRequest::to_value() const {
    return Value::map({
        {"algo_ids", Value::list_of(algo_ids)},
        {"request_id", request_id},
        {"subject_id", subject_id},
        {"token", token.to_value()},
        {"vasp_id", vasp_id},
    });
}

Result<ClaimsRequest> ClaimsRequest::from_value(const Value& record) {
    ClaimsRequest r;
    CEN_TRY(id, get_string(record, "request_id"));
    r.request_id = id;
    CEN_TRY(vasp, get_string(record, "vasp_id"));
    r.vasp_id = vasp;
    CEN_TRY(subject, get_string(record, "subject_id"));
    r.subject_id = subject;
    CEN_TRY(algos, get_string_list(record, "algo_ids"));
    r.algo_ids = algos;
    CEN_TRY(token_record, get_map(record, "token"));
    CEN_TRY(token_env, SignedEnvelope::from_value(Value(*token_record)));
    CEN_TRY(token, AccessToken::from_envelope(std::move(token_env)));
    r.token = token;
    return r;
}

namespace {

// A node always resolves its own keys, wherever the directory came from.
KeyLookup with_own_keys(KeyLookup base, std::string cp_id, Bytes cp_key, std::string as_id,
                        Bytes as_key) {
    return [base = std::move(base), cp_id = std::move(cp_id), cp_key = std::move(cp_key),
            as_id = std::move(as_id),
            as_key = std::move(as_key)](std::string_view id) -> std::optional<Bytes> {
        if (id == cp_id) return cp_key;
        if (id == as_id) return as_key;
        return base ? base(id) : std::nullopt;
    };
}

}  // namespace

ClaimsProvider::ClaimsProvider(KeyPair cp_key, KeyPair as_key, const AlgorithmRegistry* registry,
                               KeyLookup keys, Options options)
    : key_(std::move(cp_key)),
      auth_(std::move(as_key), options.token_ttl_ms),
      registry_(registry),
      keys_(with_own_keys(std::move(keys), key_.key_id, key_.public_key, auth_.service_id(),
                          auth_.public_key())),
      options_(options),
      log_(keys_) {}

Result<void> ClaimsProvider::store_consent(const SignedEnvelope& consent_envelope) {
    CEN_TRY(consent, ConsentRecord::from_envelope(consent_envelope));
    auto subject_pk = keys_(consent.subject_id);
    if (!subject_pk || !envelope_ok(consent_envelope, *subject_pk)) {
        return make_error(ErrorCode::bad_signature, "consent envelope does not verify");
    }
    if (consent.audience != provider_id()) {
        return make_error(ErrorCode::invalid_argument, "consent granted to a different audience");
    }
    auto key = std::make_pair(consent.subject_id, consent.algo_id);
    auto it = consents_.find(key);
    if (it == consents_.end() || it->second.granted_at <= consent.granted_at) {
        consents_.insert_or_assign(key, std::move(consent));
    }
    return ok();
}

std::optional<ConsentRecord> ClaimsProvider::find_consent(std::string_view subject_id,
                                                          std::string_view algo_id) const {
    auto it = consents_.find(std::make_pair(std::string(subject_id), std::string(algo_id)));
    if (it == consents_.end()) return std::nullopt;
    return it->second;
}

void ClaimsProvider::set_route(std::string algo_id, std::string provider_node) {
    routes_.insert_or_assign(std::move(algo_id), std::move(provider_node));
}

std::optional<std::string> ClaimsProvider::route(std::string_view algo_id) const {
    auto it = routes_.find(std::string(algo_id));
    if (it == routes_.end()) return std::nullopt;
    return it->second;
}

Result<std::vector<ClaimsProvider::PlannedExecution>> ClaimsProvider::admit(
    const ClaimsRequest& request, std::int64_t now_ms) {
    CEN_CHECK_OK(auth_.check_token(request.token, request.vasp_id, now_ms));
    for (const auto& algo : request.algo_ids) {
        if (std::find(request.token.allowed_algos.begin(), request.token.allowed_algos.end(),
                      algo) == request.token.allowed_algos.end()) {
            return make_error(ErrorCode::scope_exceeded,
                              "'" + algo + "' is outside the token scope");
        }
    }
    std::vector<PlannedExecution> plan;
    for (const auto& algo : request.algo_ids) {
        PlannedExecution exec;
        exec.algo_id = algo;
        exec.descriptor = registry_->resolve(algo);
        if (exec.descriptor == nullptr) {
            exec.admission_error =
                make_error(ErrorCode::unknown_algorithm, "'" + algo + "' is not published");
        } else if (exec.descriptor->output_kind == OutputKind::subject_level) {
            exec.consent = find_consent(request.subject_id, algo);
        }
        plan.push_back(std::move(exec));
    }
    return plan;
}

namespace {

std::string claim_text(const AlgoResponse& response) {
    const auto field = [&](const char* name) -> std::string {
        const Value* v = response.result.find(name);
        if (v == nullptr) return "?";
        if (v->is_int()) return std::to_string(v->as_int());
        if (v->is_string()) return v->as_string();
        return must_canonicalize(*v);
    };
    if (response.algo_id == "tx-range") {
        return "transaction amounts ranged from " + field("min") + " to " + field("max") +
               " across " + std::to_string(response.records_used) + " records";
    }
    if (response.algo_id == "residency") {
        return "subject legally resides in " + field("city") + ", " + field("country");
    }
    if (response.algo_id == "count-active-accounts") {
        return field("count") + " subjects hold an active account";
    }
    if (response.algo_id == "mean-balance") {
        return "balances sum to " + field("sum") + " across " + field("count") + " rows";
    }
    return response.algo_id + " " + response.version + " result " +
           must_canonicalize(response.result);
}

}  // namespace

Result<ClaimsOutcome> ClaimsProvider::collate(
    const ClaimsRequest& request,
    const std::vector<std::pair<std::string, Result<AlgoResponse>>>& results,
    std::int64_t now_ms) {
    ClaimsOutcome outcome;
    std::vector<Claim> claims;
    for (const auto& [algo_id, result] : results) {
        if (!result.ok()) {
            outcome.failures.push_back(AlgoFailure{algo_id, result.error()});
            continue;
        }
        const AlgoResponse& response = result.value();
        Claim claim;
        claim.claim_id = request.request_id + "/" + response.algo_id;
        claim.subject_id = request.subject_id;
        if (response.result.is_map()) {
            claim.attributes = response.result.as_map();
        } else {
            claim.attributes = Value::Map{{"value", response.result}};
        }
        claim.text = claim_text(response);
        claim.provenance.push_back(response.provenance);
        claim.issued_at = now_ms;
        claim.expires_at = now_ms + options_.claim_ttl_ms;
        claims.push_back(std::move(claim));
    }
    if (claims.empty()) {
        std::string causes;
        for (const auto& failure : outcome.failures) {
            if (!causes.empty()) causes += "; ";
            causes += failure.algo_id + ": " + failure.error.to_string();
        }
        return make_error(ErrorCode::all_algorithms_failed, causes);
    }
    Value::List claim_values;
    for (const auto& claim : claims) claim_values.push_back(claim.to_value());
    auto payload = must_canonicalize(Value::map({
        {"claims", Value(std::move(claim_values))},
        {"issuer_id", provider_id()},
        {"request_id", request.request_id},
        {"subject_id", request.subject_id},
    }));
    auto env = sign_envelope(key_, PayloadType::claim_set, std::move(payload), now_ms);
    CEN_TRY(claimset, ClaimSet::from_envelope(std::move(env)));
    CEN_CHECK_OK(mirror_to_pds(claimset));
    CEN_CHECK_OK(log_.append(claimset.envelope, now_ms));
    outcome.claimset = std::move(claimset);
    return outcome;
}

Result<ClaimsOutcome> ClaimsProvider::handle_request(
    const ClaimsRequest& request,
    const std::function<Result<AlgoResponse>(const PlannedExecution&)>& executor,
    std::int64_t now_ms) {
    CEN_TRY(plan, admit(request, now_ms));
    std::vector<std::pair<std::string, Result<AlgoResponse>>> results;
    for (const auto& exec : plan) {
        if (exec.admission_error) {
            results.emplace_back(exec.algo_id, *exec.admission_error);
        } else {
            results.emplace_back(exec.algo_id, executor(exec));
        }
    }
    return collate(request, results, now_ms);
}

Result<void> ClaimsProvider::mirror_to_pds(const ClaimSet& claimset) {
    if (claimset.issuer_id != provider_id()) {
        return make_error(ErrorCode::invalid_argument, "claim set issued by another provider");
    }
    auto [it, inserted] =
        pds_.try_emplace(claimset.subject_id, PersonalDataStore(claimset.subject_id));
    (void)inserted;
    it->second.mirror(claimset);
    return ok();
}

const PersonalDataStore* ClaimsProvider::pds(std::string_view subject_id) const {
    auto it = pds_.find(std::string(subject_id));
    return it == pds_.end() ? nullptr : &it->second;
}

}  // namespace cen
