#include "cen/data_provider.hpp"

#include <algorithm>
#include <set>

namespace cen {

std::string_view output_kind_name(OutputKind k) {
    return k == OutputKind::aggregate ? "aggregate" : "subject_level";
}

std::optional<OutputKind> output_kind_from_name(std::string_view name) {
    if (name == "aggregate") return OutputKind::aggregate;
    if (name == "subject_level") return OutputKind::subject_level;
    return std::nullopt;
}

Value AlgorithmDescriptor::to_value() const {
    return Value::map({
        {"algo_id", algo_id},
        {"lay_description", lay_description},
        {"output_kind", output_kind_name(output_kind)},
        {"required_schema", Value::list_of(required_schema)},
        {"version", version},
        {"vetted", vetted},
    });
}

Result<AlgorithmDescriptor> AlgorithmDescriptor::from_value(const Value& record) {
    AlgorithmDescriptor d;
    CEN_TRY(id, get_string(record, "algo_id"));
    d.algo_id = id;
    CEN_TRY(version, get_string(record, "version"));
    d.version = version;
    CEN_TRY(lay, get_string(record, "lay_description"));
    d.lay_description = lay;
    CEN_TRY(kind, get_string(record, "output_kind"));
    auto parsed_kind = output_kind_from_name(kind);
    if (!parsed_kind) return make_error(ErrorCode::parse_error, "bad output_kind");
    d.output_kind = *parsed_kind;
    CEN_TRY(schema, get_string_list(record, "required_schema"));
    d.required_schema = schema;
    CEN_TRY(vetted, get_bool(record, "vetted"));
    d.vetted = vetted;
    return d;
}

Result<void> AlgorithmRegistry::register_algorithm(AlgorithmDescriptor descriptor) {
    if (descriptor.algo_id.empty() || descriptor.version.empty() ||
        descriptor.lay_description.empty()) {
        return make_error(ErrorCode::invalid_argument, "descriptor fields must be non-empty");
    }
    auto key = std::make_pair(descriptor.algo_id, descriptor.version);
    if (entries_.contains(key)) {
        return make_error(ErrorCode::duplicate_algorithm,
                          descriptor.algo_id + " " + descriptor.version);
    }
    entries_.emplace(std::move(key), std::move(descriptor));
    return ok();
}

const AlgorithmDescriptor* AlgorithmRegistry::find(std::string_view algo_id,
                                                   std::string_view version) const {
    auto it = entries_.find(std::make_pair(std::string(algo_id), std::string(version)));
    return it == entries_.end() ? nullptr : &it->second;
}

const AlgorithmDescriptor* AlgorithmRegistry::resolve(std::string_view algo_id) const {
    const AlgorithmDescriptor* best = nullptr;
    for (const auto& [key, descriptor] : entries_) {
        if (key.first != algo_id) continue;
        if (best == nullptr || (descriptor.vetted && !best->vetted) ||
            (descriptor.vetted == best->vetted && key.second > best->version)) {
            best = &descriptor;
        }
    }
    return best;
}

bool AlgorithmRegistry::contains(std::string_view algo_id) const {
    return resolve(algo_id) != nullptr;
}

Value AlgorithmRegistry::to_value() const {
    Value::List items;
    for (const auto& [key, descriptor] : entries_) items.push_back(descriptor.to_value());
    return Value::map({{"algorithms", Value(std::move(items))}});
}

Result<void> Dataset::validate() const {
    if (dataset_id.empty() || provider_id.empty()) {
        return make_error(ErrorCode::invalid_argument, "dataset ids must be non-empty");
    }
    std::set<std::string> expected(schema.begin(), schema.end());
    if (expected.size() != schema.size()) {
        return make_error(ErrorCode::invalid_argument, "duplicate schema field");
    }
    for (const auto& record : records) {
        std::set<std::string> got;
        for (const auto& [k, v] : record.fields) got.insert(k);
        if (got != expected) {
            return make_error(ErrorCode::schema_mismatch,
                              "record for '" + record.subject_id + "' does not match schema");
        }
    }
    return ok();
}

CanonicalBytes dataset_record_canonical(const DatasetRecord& record) {
    return must_canonicalize(Value::map({
        {"fields", Value(record.fields)},
        {"subject_id", record.subject_id},
    }));
}

Result<ConsentRecord> ConsentRecord::from_envelope(SignedEnvelope env) {
    if (env.payload_type != PayloadType::consent) {
        return make_error(ErrorCode::parse_error, "not a consent envelope");
    }
    CEN_TRY(payload, env.payload_value());
    ConsentRecord c;
    CEN_TRY(subject, get_string(payload, "subject_id"));
    c.subject_id = subject;
    CEN_TRY(algo, get_string(payload, "algo_id"));
    c.algo_id = algo;
    CEN_TRY(audience, get_string(payload, "audience"));
    c.audience = audience;
    CEN_TRY(granted, get_int(payload, "granted_at"));
    c.granted_at = granted;
    CEN_TRY(expires, get_int(payload, "expires_at"));
    c.expires_at = expires;
    c.envelope = std::move(env);
    return c;
}

ConsentRecord grant_consent(const KeyPair& subject_key, std::string_view algo_id,
                            std::string_view audience, std::int64_t now_ms, std::int64_t ttl_ms) {
    auto payload = must_canonicalize(Value::map({
        {"algo_id", std::string(algo_id)},
        {"audience", std::string(audience)},
        {"expires_at", now_ms + ttl_ms},
        {"granted_at", now_ms},
        {"subject_id", subject_key.key_id},
    }));
    auto env = sign_envelope(subject_key, PayloadType::consent, std::move(payload), now_ms);
    return ConsentRecord::from_envelope(std::move(env)).value();
}

Result<void> validate_consent(const ConsentRecord& consent, const Bytes& subject_public_key,
                              std::string_view subject_id, std::string_view algo_id,
                              std::string_view audience, std::int64_t now_ms) {
    if (consent.subject_id != subject_id || consent.envelope.signer_id != subject_id) {
        return make_error(ErrorCode::consent_missing, "consent names a different subject");
    }
    if (consent.algo_id != algo_id) {
        return make_error(ErrorCode::consent_missing, "consent names a different algorithm");
    }
    if (consent.audience != audience) {
        return make_error(ErrorCode::consent_missing, "consent granted to a different audience");
    }
    if (!envelope_ok(consent.envelope, subject_public_key)) {
        return make_error(ErrorCode::consent_missing, "consent signature does not verify");
    }
    if (now_ms >= consent.expires_at) {
        return make_error(ErrorCode::consent_expired,
                          "expired at " + std::to_string(consent.expires_at));
    }
    return ok();
}

Value Provenance::to_value() const {
    return Value::map({
        {"algo_id", algo_id},
        {"dataset_id", dataset_id},
        {"executed_at", executed_at},
        {"provider_id", provider_id},
        {"version", version},
    });
}

Result<Provenance> Provenance::from_value(const Value& record) {
    Provenance p;
    CEN_TRY(dataset, get_string(record, "dataset_id"));
    p.dataset_id = dataset;
    CEN_TRY(provider, get_string(record, "provider_id"));
    p.provider_id = provider;
    CEN_TRY(algo, get_string(record, "algo_id"));
    p.algo_id = algo;
    CEN_TRY(version, get_string(record, "version"));
    p.version = version;
    CEN_TRY(at, get_int(record, "executed_at"));
    p.executed_at = at;
    return p;
}

Value AlgoResponse::to_value() const {
    Value v = Value::map({
        {"algo_id", algo_id},
        {"provenance", provenance.to_value()},
        {"records_used", records_used},
        {"result", result},
        {"version", version},
    });
    if (subject_id) v.set("subject_id", *subject_id);
    return v;
}

Result<AlgoResponse> AlgoResponse::from_value(const Value& record) {
    AlgoResponse r;
    CEN_TRY(algo, get_string(record, "algo_id"));
    r.algo_id = algo;
    CEN_TRY(version, get_string(record, "version"));
    r.version = version;
    if (const Value* subject = record.find("subject_id")) {
        if (!subject->is_string()) return make_error(ErrorCode::parse_error, "bad subject_id");
        r.subject_id = subject->as_string();
    }
    const Value* result = record.find("result");
    if (result == nullptr) return make_error(ErrorCode::parse_error, "missing result");
    r.result = *result;
    CEN_TRY(used, get_int(record, "records_used"));
    r.records_used = used;
    CEN_TRY(prov_map, get_map(record, "provenance"));
    CEN_TRY(prov, Provenance::from_value(Value(*prov_map)));
    r.provenance = prov;
    return r;
}

Result<void> DataProvider::add_dataset(Dataset dataset) {
    CEN_CHECK_OK(dataset.validate());
    if (dataset.provider_id != provider_id_) {
        return make_error(ErrorCode::invalid_argument, "dataset belongs to another provider");
    }
    auto id = dataset.dataset_id;
    if (!datasets_.emplace(std::move(id), std::move(dataset)).second) {
        return make_error(ErrorCode::invalid_argument, "duplicate dataset id");
    }
    return ok();
}

Result<void> DataProvider::serve(std::string algo_id, std::string dataset_id) {
    if (!datasets_.contains(dataset_id)) {
        return make_error(ErrorCode::not_found, "unknown dataset '" + dataset_id + "'");
    }
    serves_.insert_or_assign(std::move(algo_id), std::move(dataset_id));
    return ok();
}

namespace {

struct AlgoRun {
    Value result;
    std::int64_t records_used = 0;
};

std::int64_t distinct_subjects(const Dataset& ds) {
    std::set<std::string> subjects;
    for (const auto& r : ds.records) subjects.insert(r.subject_id);
    return static_cast<std::int64_t>(subjects.size());
}

Result<std::int64_t> int_field(const DatasetRecord& r, const std::string& name) {
    auto it = r.fields.find(name);
    if (it == r.fields.end() || !it->second.is_int()) {
        return make_error(ErrorCode::schema_mismatch, "field '" + name + "' is not an integer");
    }
    return it->second.as_int();
}

Result<AlgoRun> run_tx_range(const Dataset& ds, const std::string& subject) {
    std::int64_t lo = 0, hi = 0, n = 0;
    for (const auto& r : ds.records) {
        if (r.subject_id != subject) continue;
        CEN_TRY(amount, int_field(r, "amount"));
        if (n == 0) {
            lo = hi = amount;
        } else {
            lo = std::min(lo, amount);
            hi = std::max(hi, amount);
        }
        ++n;
    }
    if (n == 0) {
        return make_error(ErrorCode::no_subject_data, "no records for subject '" + subject + "'");
    }
    return AlgoRun{Value::map({{"max", hi}, {"min", lo}}), n};
}

Result<AlgoRun> run_residency(const Dataset& ds, const std::string& subject) {
    for (const auto& r : ds.records) {
        if (r.subject_id != subject) continue;
        auto city = r.fields.find("city");
        auto country = r.fields.find("country");
        if (city == r.fields.end() || country == r.fields.end() || !city->second.is_string() ||
            !country->second.is_string()) {
            return make_error(ErrorCode::schema_mismatch, "residency fields missing");
        }
        return AlgoRun{Value::map({{"city", city->second}, {"country", country->second}}), 1};
    }
    return make_error(ErrorCode::no_subject_data, "no profile for subject '" + subject + "'");
}

Result<AlgoRun> run_count_active(const Dataset& ds) {
    std::set<std::string> active;
    for (const auto& r : ds.records) {
        auto it = r.fields.find("active");
        if (it == r.fields.end() || !it->second.is_bool()) {
            return make_error(ErrorCode::schema_mismatch, "field 'active' is not a boolean");
        }
        if (it->second.as_bool()) active.insert(r.subject_id);
    }
    return AlgoRun{Value::map({{"count", static_cast<std::int64_t>(active.size())}}),
                   distinct_subjects(ds)};
}

Result<AlgoRun> run_mean_balance(const Dataset& ds) {
    std::int64_t sum = 0, rows = 0;
    for (const auto& r : ds.records) {
        CEN_TRY(balance, int_field(r, "balance"));
        sum += balance;
        ++rows;
    }
    // Exact integers only on the wire; consumers divide as needed.
    return AlgoRun{Value::map({{"count", rows}, {"sum", sum}}), distinct_subjects(ds)};
}

}  // namespace

Result<AlgoResponse> DataProvider::execute(std::string_view algo_id, std::string_view version,
                                           const std::optional<std::string>& subject_id,
                                           const Value::Map& params,
                                           const std::optional<ConsentRecord>& consent,
                                           std::string_view caller_id, std::int64_t now_ms) const {
    (void)params;  // the fixed catalogue takes no extra parameters yet
    const AlgorithmDescriptor* descriptor = registry_->find(algo_id, version);
    if (descriptor == nullptr) {
        return make_error(ErrorCode::unknown_algorithm,
                          std::string(algo_id) + " " + std::string(version));
    }
    if (!descriptor->vetted) {
        return make_error(ErrorCode::vetting_required, descriptor->algo_id);
    }
    auto serve_it = serves_.find(descriptor->algo_id);
    if (serve_it == serves_.end()) {
        return make_error(ErrorCode::unknown_algorithm,
                          "'" + descriptor->algo_id + "' is not served by " + provider_id_);
    }
    const Dataset& dataset = datasets_.at(serve_it->second);
    for (const auto& field : descriptor->required_schema) {
        if (std::find(dataset.schema.begin(), dataset.schema.end(), field) ==
            dataset.schema.end()) {
            return make_error(ErrorCode::schema_mismatch,
                              "dataset lacks required field '" + field + "'");
        }
    }

    if (descriptor->output_kind == OutputKind::subject_level) {
        if (!subject_id) {
            return make_error(ErrorCode::invalid_argument, "subject_level run needs a subject");
        }
        if (!consent) {
            return make_error(ErrorCode::consent_missing,
                              "no consent for '" + descriptor->algo_id + "' by " + *subject_id);
        }
        auto subject_pk = subject_keys_(*subject_id);
        if (!subject_pk) {
            return make_error(ErrorCode::consent_missing, "subject key unknown");
        }
        CEN_CHECK_OK(validate_consent(*consent, *subject_pk, *subject_id, descriptor->algo_id,
                                      caller_id, now_ms));
    }

    Result<AlgoRun> run = make_error(ErrorCode::unknown_algorithm, "no implementation");
    if (descriptor->algo_id == "tx-range") {
        run = run_tx_range(dataset, *subject_id);
    } else if (descriptor->algo_id == "residency") {
        run = run_residency(dataset, *subject_id);
    } else if (descriptor->algo_id == "count-active-accounts") {
        run = run_count_active(dataset);
    } else if (descriptor->algo_id == "mean-balance") {
        run = run_mean_balance(dataset);
    }
    if (!run.ok()) return run.error();

    if (descriptor->output_kind == OutputKind::aggregate &&
        run.value().records_used < k_min_) {
        return make_error(ErrorCode::aggregate_too_small,
                          std::to_string(run.value().records_used) + " subjects < k_min " +
                              std::to_string(k_min_));
    }

    AlgoResponse response;
    response.algo_id = descriptor->algo_id;
    response.version = descriptor->version;
    if (descriptor->output_kind == OutputKind::subject_level) response.subject_id = subject_id;
    response.result = std::move(run.value().result);
    response.records_used = run.value().records_used;
    response.provenance = Provenance{dataset.dataset_id, provider_id_, descriptor->algo_id,
                                     descriptor->version, now_ms};
    return response;
}

}  // namespace cen
