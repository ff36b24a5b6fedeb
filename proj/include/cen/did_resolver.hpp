#pragma once

#include <map>
#include <string>
#include <vector>

#include "cen/envelope.hpp"

namespace cen {

/// Subject-signed service endpoint declaration. Resolution always returns
/// the newest accepted record for a DID.
struct EndpointRecord {
    std::string did;
    std::string claims_provider_id;
    std::string endpoint_address;
    std::int64_t recorded_at = 0;
    SignedEnvelope envelope;

    Value to_value() const { return envelope.to_value(); }
    static Result<EndpointRecord> from_envelope(SignedEnvelope env);
};

EndpointRecord make_endpoint_record(const KeyPair& subject_key, std::string_view did,
                                    std::string_view claims_provider_id,
                                    std::string_view endpoint_address, std::int64_t recorded_at);

/// Replicated signed-record registry with newest-record-wins resolution.
/// The full registration history is retained so head transitions can be
/// replayed and audited.
class DidResolver {
  public:
    /// Binds a DID to its controlling key. Registrations for unbound DIDs
    /// are rejected.
    void bind(std::string did, Bytes controller_public_key);

    /// BadSignature when the envelope does not verify under the DID's key;
    /// StaleRecord when recorded_at does not strictly advance the head.
    Result<void> register_record(const EndpointRecord& record);

    Result<EndpointRecord> resolve(std::string_view did) const;

    /// Accepted records for a DID, oldest first (head is back()).
    const std::vector<EndpointRecord>* history(std::string_view did) const;

    /// Newline-delimited canonical dump of the accepted history.
    std::string dump() const;

  private:
    std::map<std::string, Bytes> bindings_;
    std::map<std::string, std::vector<EndpointRecord>> records_;
};

}  // namespace cen
