#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cen/envelope.hpp"

namespace cen {

enum class OutputKind { aggregate, subject_level };

std::string_view output_kind_name(OutputKind k);
std::optional<OutputKind> output_kind_from_name(std::string_view name);

struct AlgorithmDescriptor {
    std::string algo_id;
    std::string version;
    std::string lay_description;
    OutputKind output_kind = OutputKind::aggregate;
    std::vector<std::string> required_schema;
    bool vetted = false;

    Value to_value() const;
    static Result<AlgorithmDescriptor> from_value(const Value& record);
};

/// Published list of algorithms a provider may run. Execution is permitted
/// only for vetted entries; (algo_id, version) pairs are unique.
class AlgorithmRegistry {
  public:
    Result<void> register_algorithm(AlgorithmDescriptor descriptor);
    const AlgorithmDescriptor* find(std::string_view algo_id, std::string_view version) const;
    /// Highest-version entry for an id, vetted entries preferred.
    const AlgorithmDescriptor* resolve(std::string_view algo_id) const;
    bool contains(std::string_view algo_id) const;

    /// The published registry document.
    Value to_value() const;

  private:
    std::map<std::pair<std::string, std::string>, AlgorithmDescriptor> entries_;
};

struct DatasetRecord {
    std::string subject_id;
    Value::Map fields;
};

/// Raw subject data held by a provider. Never leaves the node: no outbound
/// message may embed a record, in whole or in part.
struct Dataset {
    std::string dataset_id;
    std::string provider_id;
    std::vector<std::string> schema;
    std::vector<DatasetRecord> records;

    Result<void> validate() const;
};

/// Canonical encoding of one record; the needle used by leak-scan tests.
CanonicalBytes dataset_record_canonical(const DatasetRecord& record);

struct ConsentRecord {
    std::string subject_id;
    std::string algo_id;
    std::string audience;  // claims-provider id the consent is scoped to
    std::int64_t granted_at = 0;
    std::int64_t expires_at = 0;
    SignedEnvelope envelope;

    Value to_value() const { return envelope.to_value(); }
    static Result<ConsentRecord> from_envelope(SignedEnvelope env);
};

ConsentRecord grant_consent(const KeyPair& subject_key, std::string_view algo_id,
                            std::string_view audience, std::int64_t now_ms, std::int64_t ttl_ms);

/// ConsentMissing / ConsentExpired per the execution contract.
Result<void> validate_consent(const ConsentRecord& consent, const Bytes& subject_public_key,
                              std::string_view subject_id, std::string_view algo_id,
                              std::string_view audience, std::int64_t now_ms);

struct Provenance {
    std::string dataset_id;
    std::string provider_id;
    std::string algo_id;
    std::string version;
    std::int64_t executed_at = 0;

    Value to_value() const;
    static Result<Provenance> from_value(const Value& record);
};

struct AlgoResponse {
    std::string algo_id;
    std::string version;
    std::optional<std::string> subject_id;  // subject_level only
    Value result;
    std::int64_t records_used = 0;
    Provenance provenance;

    Value to_value() const;
    static Result<AlgoResponse> from_value(const Value& record);
};

/// Data Provider runtime: executes vetted algorithms against local datasets.
/// Subject-level output requires a valid consent naming the algorithm and
/// the requesting audience; aggregate output is refused below the k_min
/// anonymity floor.
class DataProvider {
  public:
    DataProvider(std::string provider_id, const AlgorithmRegistry* registry, KeyLookup subject_keys,
                 std::int64_t k_min = 5)
        : provider_id_(std::move(provider_id)),
          registry_(registry),
          subject_keys_(std::move(subject_keys)),
          k_min_(k_min) {}

    Result<void> add_dataset(Dataset dataset);
    /// Binds an algorithm id to the dataset it runs against.
    Result<void> serve(std::string algo_id, std::string dataset_id);

    Result<AlgoResponse> execute(std::string_view algo_id, std::string_view version,
                                 const std::optional<std::string>& subject_id,
                                 const Value::Map& params,
                                 const std::optional<ConsentRecord>& consent,
                                 std::string_view caller_id, std::int64_t now_ms) const;

    const std::string& provider_id() const { return provider_id_; }
    std::int64_t k_min() const { return k_min_; }
    const std::map<std::string, Dataset>& datasets() const { return datasets_; }

  private:
    std::string provider_id_;
    const AlgorithmRegistry* registry_;
    KeyLookup subject_keys_;
    std::int64_t k_min_;
    std::map<std::string, Dataset> datasets_;
    std::map<std::string, std::string> serves_;
};

}  // namespace cen
