#include "cen/did_resolver.hpp"

namespace cen {

Result<EndpointRecord> EndpointRecord::from_envelope(SignedEnvelope env) {
    if (env.payload_type != PayloadType::endpoint_record) {
        return make_error(ErrorCode::parse_error, "not an endpoint record envelope");
    }
    CEN_TRY(payload, env.payload_value());
    EndpointRecord record;
    CEN_TRY(did, get_string(payload, "did"));
    record.did = did;
    CEN_TRY(cp, get_string(payload, "claims_provider_id"));
    record.claims_provider_id = cp;
    CEN_TRY(address, get_string(payload, "endpoint_address"));
    record.endpoint_address = address;
    CEN_TRY(at, get_int(payload, "recorded_at"));
    record.recorded_at = at;
    record.envelope = std::move(env);
    return record;
}

EndpointRecord make_endpoint_record(const KeyPair& subject_key, std::string_view did,
                                    std::string_view claims_provider_id,
                                    std::string_view endpoint_address, std::int64_t recorded_at) {
    auto payload = must_canonicalize(Value::map({
        {"claims_provider_id", std::string(claims_provider_id)},
        {"did", std::string(did)},
        {"endpoint_address", std::string(endpoint_address)},
        {"recorded_at", recorded_at},
    }));
    auto env = sign_envelope(subject_key, PayloadType::endpoint_record, std::move(payload),
                             recorded_at);
    return EndpointRecord::from_envelope(std::move(env)).value();
}

void DidResolver::bind(std::string did, Bytes controller_public_key) {
    bindings_.insert_or_assign(std::move(did), std::move(controller_public_key));
}

Result<void> DidResolver::register_record(const EndpointRecord& record) {
    auto binding = bindings_.find(record.did);
    if (binding == bindings_.end()) {
        return make_error(ErrorCode::not_found, "no key bound to '" + record.did + "'");
    }
    if (!envelope_ok(record.envelope, binding->second)) {
        return make_error(ErrorCode::bad_signature,
                          "record not signed by the key bound to '" + record.did + "'");
    }
    auto& history = records_[record.did];
    if (!history.empty() && record.recorded_at <= history.back().recorded_at) {
        return make_error(ErrorCode::stale_record,
                          "recorded_at " + std::to_string(record.recorded_at) +
                              " does not advance head " +
                              std::to_string(history.back().recorded_at));
    }
    history.push_back(record);
    return ok();
}

Result<EndpointRecord> DidResolver::resolve(std::string_view did) const {
    auto it = records_.find(std::string(did));
    if (it == records_.end() || it->second.empty()) {
        return make_error(ErrorCode::not_found, "no record for '" + std::string(did) + "'");
    }
    return it->second.back();
}

const std::vector<EndpointRecord>* DidResolver::history(std::string_view did) const {
    auto it = records_.find(std::string(did));
    return it == records_.end() ? nullptr : &it->second;
}

std::string DidResolver::dump() const {
    std::string out;
    for (const auto& [did, history] : records_) {
        for (const auto& record : history) {
            out += must_canonicalize(record.to_value());
            out.push_back('\n');
        }
    }
    return out;
}

}  // namespace cen
