#include "cen/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "cen/report.hpp"

namespace cen {

// ---------------------------------------------------------------------------
// Config serialization

namespace {

Error config_error(std::string detail) {
    return make_error(ErrorCode::config_invalid, std::move(detail));
}

Value locator_value(LocatorKind kind, const std::string& value) {
    return Value::map({{"kind", locator_kind_name(kind)}, {"value", value}});
}

}  // namespace

Value ScenarioConfig::to_value() const {
    Value::List root_list;
    for (const auto& r : roots) root_list.push_back(r);
    Value::List subject_list;
    for (const auto& s : subjects) subject_list.push_back(s);

    Value::List registry_list;
    for (const auto& r : registries) {
        registry_list.push_back(Value::map({
            {"attestation_ttl_ms", r.attestation_ttl_ms},
            {"enrollments", Value::list_of(r.enrollments)},
            {"id", r.id},
            {"root", r.root},
        }));
    }

    Value::List algo_list;
    for (const auto& a : algorithms) algo_list.push_back(a.to_value());

    Value::List provider_list;
    for (const auto& p : providers) {
        Value::List datasets;
        for (const auto& ds : p.datasets) {
            Value::List records;
            for (const auto& rec : ds.records) {
                records.push_back(Value::map({
                    {"fields", Value(rec.fields)},
                    {"subject", rec.subject_id},
                }));
            }
            datasets.push_back(Value::map({
                {"dataset_id", ds.dataset_id},
                {"records", Value(std::move(records))},
                {"schema", Value::list_of(ds.schema)},
            }));
        }
        Value::List serves;
        for (const auto& [algo, dataset] : p.serves) {
            serves.push_back(Value::map({{"algo", algo}, {"dataset", dataset}}));
        }
        Value provider_value = Value::map({
            {"datasets", Value(std::move(datasets))},
            {"id", p.id},
            {"k_min", p.k_min},
            {"serves", Value(std::move(serves))},
        });
        if (!p.record_files.empty()) {
            Value::Map files;
            for (const auto& [dataset, file] : p.record_files) {
                files.insert_or_assign(dataset, file);
            }
            provider_value.set("record_files", Value(std::move(files)));
        }
        provider_list.push_back(std::move(provider_value));
    }

    Value::List cp_list;
    for (const auto& cp : claims_providers) {
        Value::List enrollments;
        for (const auto& v : cp.vasps) {
            enrollments.push_back(Value::map({
                {"credential", v.credential},
                {"entitled_algos", Value::list_of(v.entitled_algos)},
                {"vasp_id", v.vasp_id},
            }));
        }
        cp_list.push_back(Value::map({
            {"claim_ttl_ms", cp.options.claim_ttl_ms},
            {"id", cp.id},
            {"request_timeout_ms", cp.options.request_timeout_ms},
            {"token_ttl_ms", cp.options.token_ttl_ms},
            {"vasps", Value(std::move(enrollments))},
        }));
    }

    Value::List vasp_list;
    for (const auto& v : vasps) {
        Value::List customers;
        for (const auto& c : v.customers) {
            Value customer = Value::map({
                {"account", c.account},
                {"balance", c.balance},
                {"locator", locator_value(c.locator_kind, c.locator_value)},
                {"name", c.name},
                {"subject", c.subject},
            });
            if (!c.claims_provider.empty()) customer.set("claims_provider", c.claims_provider);
            if (!c.did.empty()) customer.set("did", c.did);
            customers.push_back(std::move(customer));
        }
        Value::Map credentials;
        for (const auto& [cp, secret] : v.credentials) credentials.insert_or_assign(cp, secret);
        Value::List policy;
        for (const auto& p : v.policy) {
            Value entry = Value::map({
                {"jurisdiction", p.jurisdiction},
                {"mode", std::string(policy_mode_name(p.mode))},
            });
            if (!p.required_algo.empty()) entry.set("required_algo", p.required_algo);
            policy.push_back(std::move(entry));
        }
        vasp_list.push_back(Value::map({
            {"credentials", Value(std::move(credentials))},
            {"customers", Value(std::move(customers))},
            {"gather_algos", Value::list_of(v.gather_algos)},
            {"id", v.id},
            {"jurisdiction", v.jurisdiction},
            {"policy", Value(std::move(policy))},
            {"policy_default", std::string(policy_mode_name(v.policy_default))},
            {"receipt_timeout_ms", v.receipt_timeout_ms},
            {"registry", v.registry},
            {"request_timeout_ms", v.request_timeout_ms},
            {"trusted_roots", Value::list_of(v.trusted_roots)},
        }));
    }

    Value::List script_list;
    for (const auto& e : script) {
        Value event = e.args;
        event.set("at", e.at);
        event.set("event", e.event);
        script_list.push_back(std::move(event));
    }

    Value doc = Value::map({
        {"algorithms", Value(std::move(algo_list))},
        {"claims_providers", Value(std::move(cp_list))},
        {"confidential_transport", confidential_transport},
        {"jitter_max_ms", jitter_max_ms},
        {"jitter_min_ms", jitter_min_ms},
        {"latency_ms", latency_ms},
        {"providers", Value(std::move(provider_list))},
        {"registries", Value(std::move(registry_list))},
        {"roots", Value(std::move(root_list))},
        {"script", Value(std::move(script_list))},
        {"seed", static_cast<std::int64_t>(seed)},
        {"subjects", Value(std::move(subject_list))},
        {"vasps", Value(std::move(vasp_list))},
    });
    if (resolver) {
        Value::List dids;
        for (const auto& b : resolver->dids) {
            dids.push_back(Value::map({{"did", b.did}, {"subject", b.subject}}));
        }
        doc.set("resolver", Value::map({{"dids", Value(std::move(dids))}, {"id", resolver->id}}));
    }
    return doc;
}

Result<ScenarioConfig> ScenarioConfig::from_value(const Value& doc) {
    ScenarioConfig cfg;
    if (!doc.is_map()) return config_error("scenario document must be a map");
    if (const Value* seed = doc.find("seed")) {
        if (!seed->is_int()) return config_error("seed must be an integer");
        cfg.seed = static_cast<std::uint64_t>(seed->as_int());
    }
    if (const Value* v = doc.find("confidential_transport")) {
        if (!v->is_bool()) return config_error("confidential_transport must be a boolean");
        cfg.confidential_transport = v->as_bool();
    }
    for (auto [key, field] : {std::pair{"latency_ms", &cfg.latency_ms},
                              {"jitter_min_ms", &cfg.jitter_min_ms},
                              {"jitter_max_ms", &cfg.jitter_max_ms}}) {
        if (const Value* v = doc.find(key)) {
            if (!v->is_int()) return config_error(std::string(key) + " must be an integer");
            *field = v->as_int();
        }
    }

    if (doc.find("roots")) {
        CEN_TRY(roots, get_string_list(doc, "roots"));
        cfg.roots = roots;
    }
    if (doc.find("subjects")) {
        CEN_TRY(subjects, get_string_list(doc, "subjects"));
        cfg.subjects = subjects;
    }

    if (const Value* registries = doc.find("registries")) {
        for (const auto& item : registries->as_list()) {
            RegistryCfg r;
            CEN_TRY(id, get_string(item, "id"));
            r.id = id;
            CEN_TRY(root, get_string(item, "root"));
            r.root = root;
            if (item.find("attestation_ttl_ms")) {
                CEN_TRY(ttl, get_int(item, "attestation_ttl_ms"));
                r.attestation_ttl_ms = ttl;
            }
            if (item.find("enrollments")) {
                CEN_TRY(enrollments, get_string_list(item, "enrollments"));
                r.enrollments = enrollments;
            }
            cfg.registries.push_back(std::move(r));
        }
    }

    if (const Value* resolver = doc.find("resolver")) {
        ResolverCfg r;
        CEN_TRY(id, get_string(*resolver, "id"));
        r.id = id;
        if (const Value* dids = resolver->find("dids")) {
            for (const auto& item : dids->as_list()) {
                CEN_TRY(did, get_string(item, "did"));
                CEN_TRY(subject, get_string(item, "subject"));
                r.dids.push_back({did, subject});
            }
        }
        cfg.resolver = std::move(r);
    }

    if (const Value* algorithms = doc.find("algorithms")) {
        for (const auto& item : algorithms->as_list()) {
            CEN_TRY(descriptor, AlgorithmDescriptor::from_value(item));
            cfg.algorithms.push_back(std::move(descriptor));
        }
    }

    if (const Value* providers = doc.find("providers")) {
        for (const auto& item : providers->as_list()) {
            ProviderCfg p;
            CEN_TRY(id, get_string(item, "id"));
            p.id = id;
            if (item.find("k_min")) {
                CEN_TRY(k, get_int(item, "k_min"));
                p.k_min = k;
            }
            if (const Value* datasets = item.find("datasets")) {
                for (const auto& ds_item : datasets->as_list()) {
                    Dataset ds;
                    CEN_TRY(dataset_id, get_string(ds_item, "dataset_id"));
                    ds.dataset_id = dataset_id;
                    ds.provider_id = p.id;
                    CEN_TRY(schema, get_string_list(ds_item, "schema"));
                    ds.schema = schema;
                    if (const Value* records = ds_item.find("records")) {
                        for (const auto& rec : records->as_list()) {
                            DatasetRecord r;
                            CEN_TRY(subject, get_string(rec, "subject"));
                            r.subject_id = subject;
                            CEN_TRY(fields, get_map(rec, "fields"));
                            r.fields = *fields;
                            ds.records.push_back(std::move(r));
                        }
                    }
                    p.datasets.push_back(std::move(ds));
                }
            }
            if (const Value* serves = item.find("serves")) {
                for (const auto& s : serves->as_list()) {
                    CEN_TRY(algo, get_string(s, "algo"));
                    CEN_TRY(dataset, get_string(s, "dataset"));
                    p.serves.emplace_back(algo, dataset);
                }
            }
            if (const Value* files = item.find("record_files")) {
                for (const auto& [dataset, file] : files->as_map()) {
                    if (!file.is_string()) return config_error("record_files must map to paths");
                    p.record_files.insert_or_assign(dataset, file.as_string());
                }
            }
            cfg.providers.push_back(std::move(p));
        }
    }

    if (const Value* cps = doc.find("claims_providers")) {
        for (const auto& item : cps->as_list()) {
            CpCfg cp;
            CEN_TRY(id, get_string(item, "id"));
            cp.id = id;
            if (item.find("claim_ttl_ms")) {
                CEN_TRY(v, get_int(item, "claim_ttl_ms"));
                cp.options.claim_ttl_ms = v;
            }
            if (item.find("request_timeout_ms")) {
                CEN_TRY(v, get_int(item, "request_timeout_ms"));
                cp.options.request_timeout_ms = v;
            }
            if (item.find("token_ttl_ms")) {
                CEN_TRY(v, get_int(item, "token_ttl_ms"));
                cp.options.token_ttl_ms = v;
            }
            if (const Value* vasps = item.find("vasps")) {
                for (const auto& v : vasps->as_list()) {
                    CpCfg::VaspEnrollment e;
                    CEN_TRY(vasp_id, get_string(v, "vasp_id"));
                    e.vasp_id = vasp_id;
                    CEN_TRY(credential, get_string(v, "credential"));
                    e.credential = credential;
                    CEN_TRY(algos, get_string_list(v, "entitled_algos"));
                    e.entitled_algos = algos;
                    cp.vasps.push_back(std::move(e));
                }
            }
            cfg.claims_providers.push_back(std::move(cp));
        }
    }

    if (const Value* vasps = doc.find("vasps")) {
        for (const auto& item : vasps->as_list()) {
            VaspCfg v;
            CEN_TRY(id, get_string(item, "id"));
            v.id = id;
            CEN_TRY(jurisdiction, get_string(item, "jurisdiction"));
            v.jurisdiction = jurisdiction;
            if (item.find("registry")) {
                CEN_TRY(reg, get_string(item, "registry"));
                v.registry = reg;
            }
            if (item.find("trusted_roots")) {
                CEN_TRY(roots, get_string_list(item, "trusted_roots"));
                v.trusted_roots = roots;
            }
            if (item.find("gather_algos")) {
                CEN_TRY(algos, get_string_list(item, "gather_algos"));
                v.gather_algos = algos;
            }
            if (const Value* credentials = item.find("credentials")) {
                for (const auto& [cp, secret] : credentials->as_map()) {
                    if (!secret.is_string()) return config_error("credential must be a string");
                    v.credentials.insert_or_assign(cp, secret.as_string());
                }
            }
            if (const Value* policy = item.find("policy")) {
                for (const auto& p : policy->as_list()) {
                    PolicyCfg entry;
                    CEN_TRY(jur, get_string(p, "jurisdiction"));
                    entry.jurisdiction = jur;
                    CEN_TRY(mode, get_string(p, "mode"));
                    auto parsed = policy_mode_from_name(mode);
                    if (!parsed) return config_error("unknown policy mode '" + mode + "'");
                    entry.mode = *parsed;
                    if (p.find("required_algo")) {
                        CEN_TRY(algo, get_string(p, "required_algo"));
                        entry.required_algo = algo;
                    }
                    v.policy.push_back(std::move(entry));
                }
            }
            if (item.find("policy_default")) {
                CEN_TRY(mode, get_string(item, "policy_default"));
                auto parsed = policy_mode_from_name(mode);
                if (!parsed) return config_error("unknown policy mode '" + mode + "'");
                v.policy_default = *parsed;
            }
            if (item.find("receipt_timeout_ms")) {
                CEN_TRY(t, get_int(item, "receipt_timeout_ms"));
                v.receipt_timeout_ms = t;
            }
            if (item.find("request_timeout_ms")) {
                CEN_TRY(t, get_int(item, "request_timeout_ms"));
                v.request_timeout_ms = t;
            }
            if (const Value* customers = item.find("customers")) {
                for (const auto& c : customers->as_list()) {
                    CustomerCfg customer;
                    CEN_TRY(subject, get_string(c, "subject"));
                    customer.subject = subject;
                    CEN_TRY(account, get_string(c, "account"));
                    customer.account = account;
                    CEN_TRY(balance, get_int(c, "balance"));
                    customer.balance = balance;
                    CEN_TRY(name, get_string(c, "name"));
                    customer.name = name;
                    CEN_TRY(locator, get_map(c, "locator"));
                    {
                        Value loc(*locator);
                        CEN_TRY(kind, get_string(loc, "kind"));
                        auto parsed = locator_kind_from_name(kind);
                        if (!parsed) return config_error("unknown locator kind '" + kind + "'");
                        customer.locator_kind = *parsed;
                        CEN_TRY(value, get_string(loc, "value"));
                        customer.locator_value = value;
                    }
                    if (c.find("claims_provider")) {
                        CEN_TRY(cp, get_string(c, "claims_provider"));
                        customer.claims_provider = cp;
                    }
                    if (c.find("did")) {
                        CEN_TRY(did, get_string(c, "did"));
                        customer.did = did;
                    }
                    v.customers.push_back(std::move(customer));
                }
            }
            cfg.vasps.push_back(std::move(v));
        }
    }

    if (const Value* script = doc.find("script")) {
        for (const auto& item : script->as_list()) {
            ScriptEvent e;
            CEN_TRY(at, get_int(item, "at"));
            e.at = at;
            CEN_TRY(event, get_string(item, "event"));
            e.event = event;
            Value::Map args = item.as_map();
            args.erase("at");
            args.erase("event");
            e.args = Value(std::move(args));
            cfg.script.push_back(std::move(e));
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Validation

Result<void> ScenarioConfig::validate() const {
    std::set<std::string> participants;
    auto declare = [&](const std::string& id, const char* what) -> Result<void> {
        if (id.empty()) return config_error(std::string(what) + " with empty id");
        if (!participants.insert(id).second) {
            return config_error("duplicate participant id '" + id + "'");
        }
        return ok();
    };
    for (const auto& r : roots) CEN_CHECK_OK(declare(r, "root"));
    for (const auto& s : subjects) CEN_CHECK_OK(declare(s, "subject"));
    for (const auto& r : registries) CEN_CHECK_OK(declare(r.id, "registry"));
    if (resolver) CEN_CHECK_OK(declare(resolver->id, "resolver"));
    for (const auto& p : providers) CEN_CHECK_OK(declare(p.id, "provider"));
    for (const auto& cp : claims_providers) {
        CEN_CHECK_OK(declare(cp.id, "claims provider"));
        CEN_CHECK_OK(declare(cp.id + ".as", "auth service"));
    }
    for (const auto& v : vasps) CEN_CHECK_OK(declare(v.id, "vasp"));

    std::set<std::string> subject_set(subjects.begin(), subjects.end());
    std::set<std::string> root_set(roots.begin(), roots.end());
    std::set<std::string> registry_set, provider_set, cp_set, vasp_set, algo_set, did_set;
    for (const auto& r : registries) registry_set.insert(r.id);
    for (const auto& p : providers) provider_set.insert(p.id);
    for (const auto& cp : claims_providers) cp_set.insert(cp.id);
    for (const auto& v : vasps) vasp_set.insert(v.id);

    std::set<std::pair<std::string, std::string>> algo_versions;
    for (const auto& a : algorithms) {
        algo_set.insert(a.algo_id);
        if (!algo_versions.emplace(a.algo_id, a.version).second) {
            return config_error("duplicate algorithm '" + a.algo_id + " " + a.version + "'");
        }
    }

    for (const auto& r : registries) {
        if (!root_set.contains(r.root)) {
            return config_error("registry '" + r.id + "' references undeclared root '" + r.root +
                                "'");
        }
        for (const auto& s : r.enrollments) {
            if (!subject_set.contains(s)) {
                return config_error("registry '" + r.id + "' enrolls undeclared subject '" + s +
                                    "'");
            }
        }
    }

    if (resolver) {
        for (const auto& b : resolver->dids) {
            if (!subject_set.contains(b.subject)) {
                return config_error("did '" + b.did + "' bound to undeclared subject '" +
                                    b.subject + "'");
            }
            if (!did_set.insert(b.did).second) {
                return config_error("duplicate did '" + b.did + "'");
            }
        }
    }

    for (const auto& p : providers) {
        std::set<std::string> dataset_set;
        for (const auto& ds : p.datasets) {
            if (!dataset_set.insert(ds.dataset_id).second) {
                return config_error("provider '" + p.id + "' has duplicate dataset '" +
                                    ds.dataset_id + "'");
            }
            Dataset copy = ds;
            copy.provider_id = p.id;
            auto valid = copy.validate();
            if (!valid.ok()) {
                return config_error("dataset '" + ds.dataset_id + "': " + valid.error().detail);
            }
        }
        for (const auto& [algo, dataset] : p.serves) {
            if (!algo_set.contains(algo)) {
                return config_error("provider '" + p.id + "' serves undeclared algorithm '" +
                                    algo + "'");
            }
            if (!dataset_set.contains(dataset)) {
                return config_error("provider '" + p.id + "' serves from undeclared dataset '" +
                                    dataset + "'");
            }
        }
        for (const auto& [dataset, file] : p.record_files) {
            (void)file;
            if (!dataset_set.contains(dataset)) {
                return config_error("provider '" + p.id + "' loads records into undeclared "
                                    "dataset '" + dataset + "'");
            }
        }
    }

    for (const auto& cp : claims_providers) {
        for (const auto& e : cp.vasps) {
            if (!vasp_set.contains(e.vasp_id)) {
                return config_error("claims provider '" + cp.id + "' enrolls undeclared vasp '" +
                                    e.vasp_id + "'");
            }
            for (const auto& algo : e.entitled_algos) {
                if (!algo_set.contains(algo)) {
                    return config_error("entitlement for '" + e.vasp_id +
                                        "' references undeclared algorithm '" + algo + "'");
                }
            }
        }
    }

    for (const auto& v : vasps) {
        if (!v.registry.empty() && !registry_set.contains(v.registry)) {
            return config_error("vasp '" + v.id + "' references undeclared registry '" +
                                v.registry + "'");
        }
        for (const auto& root : v.trusted_roots) {
            if (!root_set.contains(root)) {
                return config_error("vasp '" + v.id + "' trusts undeclared root '" + root + "'");
            }
        }
        for (const auto& algo : v.gather_algos) {
            if (!algo_set.contains(algo)) {
                return config_error("vasp '" + v.id + "' gathers undeclared algorithm '" + algo +
                                    "'");
            }
        }
        for (const auto& [cp, secret] : v.credentials) {
            (void)secret;
            if (!cp_set.contains(cp)) {
                return config_error("vasp '" + v.id + "' holds a credential for undeclared '" +
                                    cp + "'");
            }
        }
        for (const auto& p : v.policy) {
            if (p.mode == PolicyMode::require_extra_claim && p.required_algo.empty()) {
                return config_error("vasp '" + v.id +
                                    "' require_extra_claim policy without required_algo");
            }
        }
        std::set<std::string> account_set;
        for (const auto& c : v.customers) {
            if (!subject_set.contains(c.subject)) {
                return config_error("vasp '" + v.id + "' onboards undeclared subject '" +
                                    c.subject + "'");
            }
            if (!account_set.insert(c.account).second) {
                return config_error("vasp '" + v.id + "' has duplicate account '" + c.account +
                                    "'");
            }
            if (!c.claims_provider.empty() && !cp_set.contains(c.claims_provider)) {
                return config_error("customer '" + c.subject +
                                    "' names undeclared claims provider '" + c.claims_provider +
                                    "'");
            }
            if (!c.did.empty() && !did_set.contains(c.did)) {
                return config_error("customer '" + c.subject + "' names unbound did '" + c.did +
                                    "'");
            }
        }
    }

    for (const auto& e : script) {
        auto need = [&](const char* key) -> Result<std::string> {
            auto v = get_string(e.args, key);
            if (!v.ok()) {
                return config_error("script event '" + e.event + "' missing field '" + key + "'");
            }
            return v.value();
        };
        auto optional_string = [&](const char* key) -> Result<void> {
            if (const Value* v = e.args.find(key); v != nullptr && !v->is_string()) {
                return config_error("script event '" + e.event + "' field '" + key +
                                    "' must be a string");
            }
            return ok();
        };
        auto optional_int = [&](const char* key) -> Result<void> {
            if (const Value* v = e.args.find(key); v != nullptr && !v->is_int()) {
                return config_error("script event '" + e.event + "' field '" + key +
                                    "' must be an integer");
            }
            return ok();
        };
        if (e.event == "onboard") {
            CEN_TRY(vasp, need("vasp"));
            CEN_TRY(subject, need("subject"));
            if (!vasp_set.contains(vasp)) {
                return config_error("onboard references undeclared vasp '" + vasp + "'");
            }
            if (!subject_set.contains(subject)) {
                return config_error("onboard references undeclared subject '" + subject + "'");
            }
            CEN_CHECK_OK(optional_string("mode"));
            CEN_CHECK_OK(optional_string("registry"));
            if (const Value* mode = e.args.find("mode")) {
                if (mode->as_string() != "ownership" && mode->as_string() != "custody") {
                    return config_error("onboard mode must be 'ownership' or 'custody'");
                }
            }
            if (const Value* reg = e.args.find("registry")) {
                if (!registry_set.contains(reg->as_string())) {
                    return config_error("onboard references undeclared registry '" +
                                        reg->as_string() + "'");
                }
            }
        } else if (e.event == "grant_consent") {
            CEN_TRY(subject, need("subject"));
            CEN_TRY(algo, need("algo"));
            CEN_TRY(audience, need("audience"));
            if (!subject_set.contains(subject)) {
                return config_error("grant_consent references undeclared subject '" + subject +
                                    "'");
            }
            if (!algo_set.contains(algo)) {
                return config_error("grant_consent references undeclared algorithm '" + algo +
                                    "'");
            }
            if (!cp_set.contains(audience)) {
                return config_error("grant_consent references undeclared claims provider '" +
                                    audience + "'");
            }
            CEN_CHECK_OK(optional_int("ttl_ms"));
        } else if (e.event == "initiate_transfer") {
            CEN_TRY(vasp, need("vasp"));
            CEN_TRY(originator, need("originator"));
            CEN_TRY(beneficiary, need("beneficiary"));
            CEN_CHECK_OK(need("beneficiary_name"));
            CEN_CHECK_OK(need("beneficiary_account"));
            CEN_TRY(beneficiary_vasp, need("beneficiary_vasp"));
            if (!vasp_set.contains(vasp)) {
                return config_error("initiate_transfer references undeclared vasp '" + vasp +
                                    "'");
            }
            if (!vasp_set.contains(beneficiary_vasp)) {
                return config_error("initiate_transfer references undeclared vasp '" +
                                    beneficiary_vasp + "'");
            }
            if (!subject_set.contains(originator) || !subject_set.contains(beneficiary)) {
                return config_error("initiate_transfer references an undeclared subject");
            }
            if (!get_int(e.args, "amount").ok()) {
                return config_error("initiate_transfer missing integer 'amount'");
            }
        } else if (e.event == "register_endpoint") {
            CEN_TRY(did, need("did"));
            CEN_TRY(cp, need("claims_provider"));
            if (!did_set.contains(did)) {
                return config_error("register_endpoint references unbound did '" + did + "'");
            }
            if (!cp_set.contains(cp)) {
                return config_error("register_endpoint references undeclared claims provider '" +
                                    cp + "'");
            }
            CEN_CHECK_OK(optional_string("address"));
            CEN_CHECK_OK(optional_int("recorded_at"));
        } else if (e.event == "drop_message" || e.event == "delay_message" ||
                   e.event == "duplicate_message") {
            for (const char* key : {"from", "to"}) {
                if (const Value* v = e.args.find(key)) {
                    if (!v->is_string() || !participants.contains(v->as_string())) {
                        return config_error("fault pattern references undeclared participant");
                    }
                }
            }
            CEN_CHECK_OK(optional_string("kind"));
            CEN_CHECK_OK(optional_int("max"));
            if (e.event == "delay_message" && !get_int(e.args, "delay_ms").ok()) {
                return config_error("delay_message missing integer 'delay_ms'");
            }
        } else {
            return config_error("unknown script event '" + e.event + "'");
        }
    }
    return ok();
}

Result<void> load_dataset_files(ScenarioConfig& config, const std::string& base_dir) {
    for (auto& provider : config.providers) {
        for (const auto& [dataset_id, file] : provider.record_files) {
            Dataset* dataset = nullptr;
            for (auto& ds : provider.datasets) {
                if (ds.dataset_id == dataset_id) dataset = &ds;
            }
            if (dataset == nullptr) {
                return config_error("record file for undeclared dataset '" + dataset_id + "'");
            }
            std::string path = base_dir.empty() ? file : base_dir + "/" + file;
            std::ifstream in(path, std::ios::binary);
            if (!in) {
                return config_error("cannot open record file '" + path + "'");
            }
            std::string line;
            std::size_t line_no = 0;
            while (std::getline(in, line)) {
                ++line_no;
                if (line.empty()) continue;
                auto record = parse_document(line);
                if (!record.ok()) {
                    return config_error(path + ":" + std::to_string(line_no) + ": " +
                                        record.error().detail);
                }
                DatasetRecord row;
                auto subject = get_string(record.value(), "subject");
                auto fields = get_map(record.value(), "fields");
                if (!subject.ok() || !fields.ok()) {
                    return config_error(path + ":" + std::to_string(line_no) +
                                        ": expected {\"fields\":{...},\"subject\":...}");
                }
                row.subject_id = subject.value();
                row.fields = *fields.value();
                dataset->records.push_back(std::move(row));
            }
        }
        provider.record_files.clear();
    }
    return ok();
}

// ---------------------------------------------------------------------------
// Node actors

namespace {

class ClaimsProviderNode : public Node {
  public:
    ClaimsProviderNode(KeyPair key, std::unique_ptr<ClaimsProvider> core)
        : Node(std::move(key)), core_(std::move(core)) {}

    ClaimsProvider& core() { return *core_; }
    AuditLog* audit_log() override { return &core_->log(); }

    void on_timer(std::string_view key, NodeContext& ctx) override {
        if (!key.starts_with("cpreq:")) return;
        std::string request_id(key.substr(6));
        auto it = pending_.find(request_id);
        if (it == pending_.end()) return;
        for (const auto& [corr, algo] : it->second.outstanding) {
            it->second.results.emplace_back(
                algo, make_error(ErrorCode::claims_unavailable, "data provider timed out"));
        }
        it->second.outstanding.clear();
        finish(request_id, ctx);
    }

  protected:
    void on_message(const Value& body, const BusMessage& message, NodeContext& ctx) override {
        auto kind = get_string(body, "kind");
        if (!kind.ok()) return;
        if (kind.value() == "auth_request") {
            handle_auth(body, message, ctx);
        } else if (kind.value() == "consent_grant") {
            handle_consent(body, message, ctx);
        } else if (kind.value() == "claims_request") {
            handle_claims_request(body, message, ctx);
        } else if (kind.value() == "algo_response") {
            handle_algo_response(body, ctx);
        }
    }

  private:
    struct Pending {
        ClaimsRequest request;
        std::string reply_to;
        std::map<std::string, std::string> outstanding;  // corr_id -> algo_id
        std::vector<std::pair<std::string, Result<AlgoResponse>>> results;
    };

    void handle_auth(const Value& body, const BusMessage& message, NodeContext& ctx) {
        auto request_id = get_string(body, "request_id");
        auto vasp_id = get_string(body, "vasp_id");
        auto credential = get_string(body, "credential");
        auto algos = get_string_list(body, "requested_algos");
        if (!request_id.ok() || !vasp_id.ok() || !credential.ok() || !algos.ok()) return;
        Value reply = Value::map({{"kind", "auth_response"}, {"request_id", request_id.value()}});
        if (vasp_id.value() != message.from_node) {
            reply.set("error", std::string(error_code_name(ErrorCode::unknown_vasp)));
            reply.set("detail", "vasp_id does not match the signing sender");
        } else {
            auto token =
                core_->auth().authenticate(vasp_id.value(), credential.value(), algos.value(),
                                           ctx.now());
            if (token.ok()) {
                reply.set("token", token.value().to_value());
            } else {
                reply.set("error", std::string(error_code_name(token.error().code)));
                reply.set("detail", token.error().detail);
            }
        }
        ctx.send(message.from_node, reply);
    }

    void handle_consent(const Value& body, const BusMessage& message, NodeContext& ctx) {
        const Value* consent_record = body.find("consent");
        if (consent_record == nullptr) return;
        auto env = SignedEnvelope::from_value(*consent_record);
        if (!env.ok() || env.value().signer_id != message.from_node) {
            ctx.note(node_id() + " rejected consent grant from " + message.from_node);
            return;
        }
        auto stored = core_->store_consent(env.value());
        if (!stored.ok()) {
            ctx.note(node_id() + " rejected consent: " + stored.error().to_string());
        }
    }

    void handle_claims_request(const Value& body, const BusMessage& message, NodeContext& ctx) {
        const Value* request_record = body.find("request");
        if (request_record == nullptr) return;
        auto parsed = ClaimsRequest::from_value(*request_record);
        if (!parsed.ok()) return;
        ClaimsRequest request = std::move(parsed).take();
        Value reply =
            Value::map({{"kind", "claims_response"}, {"request_id", request.request_id}});
        if (request.vasp_id != message.from_node) {
            reply.set("error", std::string(error_code_name(ErrorCode::token_invalid)));
            reply.set("detail", "request is not signed by the named VASP");
            ctx.send(message.from_node, reply);
            return;
        }
        auto plan = core_->admit(request, ctx.now());
        if (!plan.ok()) {
            reply.set("error", std::string(error_code_name(plan.error().code)));
            reply.set("detail", plan.error().detail);
            ctx.send(message.from_node, reply);
            return;
        }
        Pending pending;
        pending.request = request;
        pending.reply_to = message.from_node;
        for (const auto& exec : plan.value()) {
            if (exec.admission_error) {
                pending.results.emplace_back(exec.algo_id, *exec.admission_error);
                continue;
            }
            auto provider = core_->route(exec.algo_id);
            if (!provider) {
                pending.results.emplace_back(
                    exec.algo_id, make_error(ErrorCode::claims_unavailable,
                                             "no data provider serves '" + exec.algo_id + "'"));
                continue;
            }
            std::string corr = request.request_id + "#" + exec.algo_id;
            Value algo_request = Value::map({
                {"algo_id", exec.algo_id},
                {"corr_id", corr},
                {"kind", "algo_request"},
                {"params", Value()},
                {"version", exec.descriptor->version},
            });
            if (exec.descriptor->output_kind == OutputKind::subject_level) {
                algo_request.set("subject_id", request.subject_id);
                if (exec.consent) algo_request.set("consent", exec.consent->to_value());
            }
            pending.outstanding.emplace(corr, exec.algo_id);
            ctx.send(*provider, algo_request);
        }
        bool all_immediate = pending.outstanding.empty();
        pending_.insert_or_assign(request.request_id, std::move(pending));
        if (all_immediate) {
            finish(request.request_id, ctx);
        } else {
            ctx.set_timer(core_->options().request_timeout_ms,
                          "cpreq:" + request.request_id);
        }
    }

    void handle_algo_response(const Value& body, NodeContext& ctx) {
        auto corr = get_string(body, "corr_id");
        if (!corr.ok()) return;
        auto hash_pos = corr.value().rfind('#');
        if (hash_pos == std::string::npos) return;
        std::string request_id = corr.value().substr(0, hash_pos);
        auto it = pending_.find(request_id);
        if (it == pending_.end()) return;
        auto outstanding = it->second.outstanding.find(corr.value());
        if (outstanding == it->second.outstanding.end()) return;
        std::string algo_id = outstanding->second;
        it->second.outstanding.erase(outstanding);

        if (const Value* response_record = body.find("response")) {
            auto response = AlgoResponse::from_value(*response_record);
            if (response.ok()) {
                it->second.results.emplace_back(algo_id, std::move(response).take());
            } else {
                it->second.results.emplace_back(
                    algo_id, make_error(ErrorCode::claims_unavailable, "malformed response"));
            }
        } else {
            auto code = ErrorCode::claims_unavailable;
            if (auto name = get_string(body, "error"); name.ok()) {
                if (auto parsed = error_code_from_name(name.value())) code = *parsed;
            }
            std::string detail;
            if (auto d = get_string(body, "detail"); d.ok()) detail = d.value();
            it->second.results.emplace_back(algo_id, make_error(code, detail));
        }
        if (it->second.outstanding.empty()) finish(request_id, ctx);
    }

    void finish(const std::string& request_id, NodeContext& ctx) {
        auto it = pending_.find(request_id);
        if (it == pending_.end()) return;
        Pending pending = std::move(it->second);
        pending_.erase(it);

        Value reply = Value::map({{"kind", "claims_response"}, {"request_id", request_id}});
        auto outcome = core_->collate(pending.request, pending.results, ctx.now());
        Value::List failures;
        auto failure_list = [&](const std::vector<AlgoFailure>& list) {
            for (const auto& f : list) {
                failures.push_back(Value::map({
                    {"algo_id", f.algo_id},
                    {"detail", f.error.detail},
                    {"error", std::string(error_code_name(f.error.code))},
                }));
            }
        };
        if (outcome.ok()) {
            failure_list(outcome.value().failures);
            reply.set("claimset", outcome.value().claimset->to_value());
        } else {
            reply.set("error", std::string(error_code_name(outcome.error().code)));
            reply.set("detail", outcome.error().detail);
        }
        reply.set("failures", Value(std::move(failures)));
        ctx.send(pending.reply_to, reply);
    }

    std::unique_ptr<ClaimsProvider> core_;
    std::map<std::string, Pending> pending_;
};

class DataProviderNode : public Node {
  public:
    DataProviderNode(KeyPair key, std::unique_ptr<DataProvider> core, KeyLookup keys)
        : Node(std::move(key)), core_(std::move(core)), log_(std::move(keys)) {}

    DataProvider& core() { return *core_; }
    AuditLog* audit_log() override { return &log_; }

  protected:
    void on_message(const Value& body, const BusMessage& message, NodeContext& ctx) override {
        auto kind = get_string(body, "kind");
        if (!kind.ok() || kind.value() != "algo_request") return;
        auto corr = get_string(body, "corr_id");
        auto algo = get_string(body, "algo_id");
        auto version = get_string(body, "version");
        if (!corr.ok() || !algo.ok() || !version.ok()) return;

        std::optional<std::string> subject;
        if (const Value* s = body.find("subject_id"); s && s->is_string()) {
            subject = s->as_string();
        }
        std::optional<ConsentRecord> consent;
        if (const Value* c = body.find("consent")) {
            auto env = SignedEnvelope::from_value(*c);
            if (env.ok()) {
                auto record = ConsentRecord::from_envelope(std::move(env).take());
                if (record.ok()) consent = std::move(record).take();
            }
        }
        Value::Map params;
        if (const Value* p = body.find("params"); p && p->is_map()) params = p->as_map();

        auto response = core_->execute(algo.value(), version.value(), subject, params, consent,
                                       message.from_node, ctx.now());
        Value reply = Value::map({{"corr_id", corr.value()}, {"kind", "algo_response"}});
        if (response.ok()) {
            reply.set("response", response.value().to_value());
            if (consent) {
                // Retain the consent evidence this execution relied on.
                auto logged = log_.append(consent->envelope, ctx.now());
                if (!logged.ok()) {
                    ctx.note(node_id() + " could not log consent: " + logged.error().to_string());
                }
            }
        } else {
            reply.set("error", std::string(error_code_name(response.error().code)));
            reply.set("detail", response.error().detail);
        }
        ctx.send(message.from_node, reply);
    }

  private:
    std::unique_ptr<DataProvider> core_;
    AuditLog log_;
};

class ResolverNode : public Node {
  public:
    ResolverNode(KeyPair key, KeyLookup keys) : Node(std::move(key)), log_(std::move(keys)) {}

    DidResolver& core() { return resolver_; }
    AuditLog* audit_log() override { return &log_; }

  protected:
    void on_message(const Value& body, const BusMessage& message, NodeContext& ctx) override {
        auto kind = get_string(body, "kind");
        if (!kind.ok()) return;
        if (kind.value() == "register_endpoint") {
            const Value* record = body.find("record");
            if (record == nullptr) return;
            auto env = SignedEnvelope::from_value(*record);
            if (!env.ok()) return;
            auto endpoint = EndpointRecord::from_envelope(std::move(env).take());
            if (!endpoint.ok()) return;
            auto registered = resolver_.register_record(endpoint.value());
            if (registered.ok()) {
                log_.append(endpoint.value().envelope, ctx.now()).value();
            } else {
                ctx.note(node_id() + " rejected endpoint record for '" + endpoint.value().did +
                         "': " + registered.error().to_string());
            }
        } else if (kind.value() == "resolve_request") {
            auto request_id = get_string(body, "request_id");
            auto did = get_string(body, "did");
            if (!request_id.ok() || !did.ok()) return;
            Value reply =
                Value::map({{"kind", "resolve_response"}, {"request_id", request_id.value()}});
            auto resolved = resolver_.resolve(did.value());
            if (resolved.ok()) {
                reply.set("record", resolved.value().to_value());
            } else {
                reply.set("error", std::string(error_code_name(resolved.error().code)));
                reply.set("detail", resolved.error().detail);
            }
            ctx.send(message.from_node, reply);
        }
    }

  private:
    DidResolver resolver_;
    AuditLog log_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Simulation

class Simulation : public Settlement {
  public:
    explicit Simulation(ScenarioConfig config) : config_(std::move(config)), rng_(config_.seed) {}

    Result<void> setup();
    Result<void> run();
    SimResult result() const;

    Result<void> settle(const std::string& transfer_id, const std::string& from_vasp,
                        const std::string& from_account, const std::string& to_vasp,
                        const std::string& to_account, std::int64_t amount) override;

    VaspNode* vasp(std::string_view id) {
        auto it = vasps_.find(std::string(id));
        return it == vasps_.end() ? nullptr : it->second;
    }
    ClaimsProvider* claims_provider(std::string_view id) {
        auto it = cps_.find(std::string(id));
        return it == cps_.end() ? nullptr : &it->second->core();
    }
    KeyRegistry* registry(std::string_view id) {
        auto it = registries_.find(std::string(id));
        return it == registries_.end() ? nullptr : it->second.registry.get();
    }
    DidResolver* resolver() { return resolver_node_ ? &resolver_node_->core() : nullptr; }
    const Directory& directory() const { return directory_; }
    const KeyPair& subject_key(std::string_view id) const { return keys_.at(std::string(id)); }

  private:
    friend class RunContext;

    struct Event {
        std::int64_t at = 0;
        std::int64_t seq = 0;
        enum class Kind { delivery, timer, stimulus } kind = Kind::delivery;
        BusMessage msg;
        std::string node;
        std::string timer_key;
        std::size_t script_index = 0;

        bool operator<(const Event& other) const {
            return at != other.at ? at < other.at : seq < other.seq;
        }
    };

    struct RegistryState {
        std::unique_ptr<KeyRegistry> registry;
        AuditLog log;
    };

    KeyPair make_key(const std::string& id) {
        return keypair_from_seed(id, derive_seed(config_.seed, "key:" + id));
    }

    void trace(Value event) {
        event.set("at", now_);
        trace_.push_back(std::move(event));
    }

    std::int64_t jitter() {
        if (config_.jitter_max_ms <= config_.jitter_min_ms) return config_.jitter_min_ms;
        auto span = static_cast<std::uint64_t>(config_.jitter_max_ms - config_.jitter_min_ms + 1);
        return config_.jitter_min_ms + static_cast<std::int64_t>(rng_() % span);
    }

    void enqueue_message(const std::string& from, const std::string& to, const Value& body);
    void enqueue_timer(const std::string& node, std::int64_t at, std::string key);
    void dispatch(const Event& event);
    void apply_stimulus(const ScenarioConfig::ScriptEvent& event);
    void do_onboard(const Value& args);
    void do_grant_consent(const Value& args);
    void do_initiate_transfer(const Value& args);
    void do_register_endpoint(const Value& args);
    void install_fault(const std::string& event, const Value& args);

    ScenarioConfig config_;
    Directory directory_;
    std::map<std::string, KeyPair> keys_;
    std::map<std::string, std::unique_ptr<Node>> nodes_;
    std::map<std::string, VaspNode*> vasps_;
    std::map<std::string, ClaimsProviderNode*> cps_;
    std::map<std::string, RegistryState> registries_;
    ResolverNode* resolver_node_ = nullptr;
    AlgorithmRegistry algo_registry_;
    std::vector<FaultRule> faults_;
    std::mt19937_64 rng_;
    std::int64_t now_ = 0;
    std::int64_t msg_counter_ = 0;
    std::int64_t seq_counter_ = 0;
    std::multiset<Event> queue_;
    std::vector<Value> trace_;
    std::set<std::string> settled_;
    bool ran_ = false;
};

class RunContext : public NodeContext {
  public:
    RunContext(Simulation& sim, std::string node_id)
        : sim_(sim), node_id_(std::move(node_id)) {}

    std::int64_t now() const override;
    void send(const std::string& to, const Value& body) override;
    void set_timer(std::int64_t delay_ms, const std::string& key) override;
    const Directory& directory() const override;
    Settlement& settlement() override;
    void note(const std::string& text) override;

  private:
    Simulation& sim_;
    std::string node_id_;
};

Result<void> Simulation::setup() {
    CEN_CHECK_OK(config_.validate());

    auto add_participant = [&](const std::string& id, const char* kind,
                               const std::string& jurisdiction = "") {
        KeyPair key = make_key(id);
        directory_.add(DirectoryEntry{id, kind, key.public_key, jurisdiction});
        keys_.emplace(id, std::move(key));
    };

    for (const auto& r : config_.roots) add_participant(r, "root");
    for (const auto& s : config_.subjects) add_participant(s, "subject");
    for (const auto& r : config_.registries) add_participant(r.id, "registry");
    if (config_.resolver) add_participant(config_.resolver->id, "resolver");
    for (const auto& p : config_.providers) add_participant(p.id, "data_provider");
    for (const auto& cp : config_.claims_providers) {
        add_participant(cp.id, "claims_provider");
        add_participant(cp.id + ".as", "auth_service");
    }
    for (const auto& v : config_.vasps) add_participant(v.id, "vasp", v.jurisdiction);

    KeyLookup keys = directory_.key_lookup();

    for (const auto& a : config_.algorithms) {
        CEN_CHECK_OK(algo_registry_.register_algorithm(a));
    }

    for (const auto& r : config_.registries) {
        auto registry = std::make_unique<KeyRegistry>(
            keys_.at(r.id), derive_seed(config_.seed, "nonce:" + r.id), r.attestation_ttl_ms);
        // The root vouches for the registry key for the whole run.
        registry->set_authority_chain({sign_authority_link(
            keys_.at(r.root), r.id, keys_.at(r.id).public_key, 0,
            std::numeric_limits<std::int64_t>::max() / 2, 0)});
        for (const auto& s : r.enrollments) {
            registry->enroll(s, keys_.at(s).public_key);
        }
        registries_.emplace(r.id, RegistryState{std::move(registry), AuditLog(keys)});
    }

    if (config_.resolver) {
        auto node = std::make_unique<ResolverNode>(keys_.at(config_.resolver->id), keys);
        for (const auto& b : config_.resolver->dids) {
            node->core().bind(b.did, keys_.at(b.subject).public_key);
        }
        resolver_node_ = node.get();
        nodes_.emplace(config_.resolver->id, std::move(node));
    }

    // Route each algorithm to the provider serving it (validated unique-ish:
    // first server wins deterministically by provider order).
    std::map<std::string, std::string> algo_routes;
    for (const auto& p : config_.providers) {
        if (!p.record_files.empty()) {
            return config_error("provider '" + p.id +
                                "' has unresolved record files; load_dataset_files() first");
        }
        auto core = std::make_unique<DataProvider>(p.id, &algo_registry_, keys, p.k_min);
        for (auto ds : p.datasets) {
            ds.provider_id = p.id;
            CEN_CHECK_OK(core->add_dataset(std::move(ds)));
        }
        for (const auto& [algo, dataset] : p.serves) {
            CEN_CHECK_OK(core->serve(algo, dataset));
            algo_routes.emplace(algo, p.id);
        }
        nodes_.emplace(p.id,
                       std::make_unique<DataProviderNode>(keys_.at(p.id), std::move(core), keys));
    }

    for (const auto& cp : config_.claims_providers) {
        auto core = std::make_unique<ClaimsProvider>(keys_.at(cp.id), keys_.at(cp.id + ".as"),
                                                     &algo_registry_, keys, cp.options);
        for (const auto& e : cp.vasps) {
            core->auth().enroll_vasp(e.vasp_id, e.credential, e.entitled_algos);
        }
        for (const auto& [algo, provider] : algo_routes) {
            core->set_route(algo, provider);
        }
        auto node = std::make_unique<ClaimsProviderNode>(keys_.at(cp.id), std::move(core));
        cps_.emplace(cp.id, node.get());
        nodes_.emplace(cp.id, std::move(node));
    }

    for (const auto& v : config_.vasps) {
        VaspOptions options;
        options.jurisdiction = v.jurisdiction;
        for (const auto& root : v.trusted_roots) {
            options.trusted_roots.push_back(TrustedRoot{root, keys_.at(root).public_key});
        }
        options.gather_algos = v.gather_algos;
        options.credentials = v.credentials;
        for (const auto& p : v.policy) {
            options.policy.insert_or_assign(p.jurisdiction,
                                            PolicyEntry{p.mode, p.required_algo});
        }
        options.policy_default = v.policy_default;
        options.resolver_node = config_.resolver ? config_.resolver->id : "";
        options.receipt_timeout_ms = v.receipt_timeout_ms;
        options.request_timeout_ms = v.request_timeout_ms;
        auto node = std::make_unique<VaspNode>(keys_.at(v.id), std::move(options), keys);
        for (const auto& c : v.customers) {
            CustomerAccount customer;
            customer.subject_id = c.subject;
            customer.account_id = c.account;
            customer.name = c.name;
            customer.locator_kind = c.locator_kind;
            customer.locator_value = c.locator_value;
            customer.claims_provider = c.claims_provider;
            customer.did = c.did;
            node->add_customer(std::move(customer), c.balance);
        }
        vasps_.emplace(v.id, node.get());
        nodes_.emplace(v.id, std::move(node));
    }

    for (std::size_t i = 0; i < config_.script.size(); ++i) {
        Event e;
        e.at = config_.script[i].at;
        e.seq = seq_counter_++;
        e.kind = Event::Kind::stimulus;
        e.script_index = i;
        queue_.insert(std::move(e));
    }
    return ok();
}

void Simulation::enqueue_message(const std::string& from, const std::string& to,
                                 const Value& body) {
    std::string kind;
    if (auto k = get_string(body, "kind"); k.ok()) kind = k.value();

    BusMessage msg;
    msg.msg_id = msg_counter_++;
    msg.from_node = from;
    msg.to_node = to;
    msg.enqueued_at = now_;
    msg.sealed = config_.confidential_transport;
    msg.envelope = sign_envelope(keys_.at(from), PayloadType::message, must_canonicalize(body),
                                 now_);

    std::int64_t extra_delay = 0;
    bool duplicate = false;
    for (auto& rule : faults_) {
        if (rule.remaining == 0) continue;
        if (!rule.pattern.matches(from, to, kind)) continue;
        if (rule.remaining > 0) --rule.remaining;
        if (rule.action == FaultActionKind::drop) {
            trace(Value::map({
                {"envelope", msg.envelope.to_value()},
                {"event", "drop"},
                {"from", from},
                {"kind", kind},
                {"msg_id", msg.msg_id},
                {"to", to},
            }));
            return;
        }
        if (rule.action == FaultActionKind::delay) {
            extra_delay = rule.delay_ms;
            trace(Value::map({
                {"delay_ms", rule.delay_ms},
                {"event", "delay"},
                {"from", from},
                {"kind", kind},
                {"msg_id", msg.msg_id},
                {"to", to},
            }));
        } else if (rule.action == FaultActionKind::duplicate) {
            duplicate = true;
            trace(Value::map({
                {"event", "duplicate"},
                {"from", from},
                {"kind", kind},
                {"msg_id", msg.msg_id},
                {"to", to},
            }));
        }
        break;  // first matching rule applies
    }

    msg.deliver_at = now_ + config_.latency_ms + jitter() + extra_delay;
    Event e;
    e.at = msg.deliver_at;
    e.seq = seq_counter_++;
    e.kind = Event::Kind::delivery;
    e.msg = msg;
    queue_.insert(e);
    if (duplicate) {
        Event copy = e;
        copy.at = msg.deliver_at + config_.latency_ms;
        copy.seq = seq_counter_++;
        copy.msg.deliver_at = copy.at;
        queue_.insert(copy);
    }
}

void Simulation::enqueue_timer(const std::string& node, std::int64_t at, std::string key) {
    Event e;
    e.at = at;
    e.seq = seq_counter_++;
    e.kind = Event::Kind::timer;
    e.node = node;
    e.timer_key = std::move(key);
    queue_.insert(std::move(e));
}

void Simulation::dispatch(const Event& event) {
    switch (event.kind) {
        case Event::Kind::stimulus: {
            const auto& script_event = config_.script[event.script_index];
            Value record = script_event.args;
            record.set("event", "stimulus");
            record.set("name", script_event.event);
            trace(std::move(record));
            apply_stimulus(script_event);
            break;
        }
        case Event::Kind::timer: {
            trace(Value::map({
                {"event", "timer"},
                {"key", event.timer_key},
                {"node", event.node},
            }));
            auto it = nodes_.find(event.node);
            if (it != nodes_.end()) {
                RunContext ctx(*this, event.node);
                it->second->on_timer(event.timer_key, ctx);
            }
            break;
        }
        case Event::Kind::delivery: {
            const BusMessage& msg = event.msg;
            auto signer_key = directory_.key_lookup()(msg.envelope.signer_id);
            bool authentic = signer_key && msg.envelope.signer_id == msg.from_node &&
                             envelope_ok(msg.envelope, *signer_key);
            auto body = authentic ? parse_canonical(msg.envelope.payload)
                                  : Result<Value>(make_error(ErrorCode::bad_signature,
                                                             "unverifiable sender"));
            std::string kind;
            if (body.ok()) {
                if (auto k = get_string(body.value(), "kind"); k.ok()) kind = k.value();
            }
            trace(Value::map({
                {"envelope", msg.envelope.to_value()},
                {"event", authentic ? "deliver" : "reject"},
                {"from", msg.from_node},
                {"kind", kind},
                {"msg_id", msg.msg_id},
                {"sealed", msg.sealed},
                {"to", msg.to_node},
            }));
            if (!authentic || !body.ok()) return;
            auto it = nodes_.find(msg.to_node);
            if (it == nodes_.end()) return;  // subjects have no inbox
            RunContext ctx(*this, msg.to_node);
            it->second->deliver(msg, body.value(), ctx);
            break;
        }
    }
}

void Simulation::apply_stimulus(const ScenarioConfig::ScriptEvent& event) {
    if (event.event == "onboard") {
        do_onboard(event.args);
    } else if (event.event == "grant_consent") {
        do_grant_consent(event.args);
    } else if (event.event == "initiate_transfer") {
        do_initiate_transfer(event.args);
    } else if (event.event == "register_endpoint") {
        do_register_endpoint(event.args);
    } else {
        install_fault(event.event, event.args);
    }
}

void Simulation::do_onboard(const Value& args) {
    std::string vasp_id = args.find("vasp")->as_string();
    std::string subject = args.find("subject")->as_string();
    std::string mode = "ownership";
    if (const Value* m = args.find("mode")) mode = m->as_string();

    std::string registry_id;
    for (const auto& v : config_.vasps) {
        if (v.id == vasp_id) registry_id = v.registry;
    }
    if (const Value* r = args.find("registry")) registry_id = r->as_string();
    auto reg_it = registries_.find(registry_id);
    if (reg_it == registries_.end()) {
        trace(Value::map({{"event", "note"},
                          {"text", "onboard skipped: no registry for vasp " + vasp_id}}));
        return;
    }
    KeyRegistry& registry = *reg_it->second.registry;
    const KeyPair& subject_kp = keys_.at(subject);

    // The subject proves possession of its key to the registry.
    auto challenge = registry.issue_challenge(subject_kp.public_key, now_);
    KeyRegistry::PossessionProof proof{
        challenge, sign_detached(subject_kp, possession_signing_input(challenge))};

    Value onboard = Value::map({{"kind", "onboard"}, {"subject", subject}});
    if (mode == "custody") {
        auto attestation =
            registry.issue_custody(vasp_id, subject, subject_kp.public_key, proof, now_);
        if (!attestation.ok()) {
            trace(Value::map({{"event", "note"},
                              {"text", "custody issuance failed for " + subject + ": " +
                                           attestation.error().to_string()}}));
        } else {
            reg_it->second.log.append(attestation.value().chain.front(), now_).value();
            onboard.set("custody", attestation.value().to_value());
        }
    } else {
        auto attestation =
            registry.issue_ownership(subject, subject_kp.public_key, proof, now_);
        if (!attestation.ok()) {
            trace(Value::map({{"event", "note"},
                              {"text", "ownership issuance failed for " + subject + ": " +
                                           attestation.error().to_string()}}));
        } else {
            reg_it->second.log.append(attestation.value().chain.front(), now_).value();
            onboard.set("ownership", attestation.value().to_value());
        }
    }
    // Presented to the VASP either way; without an attestation the customer
    // stays unverifiable and transfers stall at counterparty verification.
    enqueue_message(subject, vasp_id, onboard);
}

void Simulation::do_grant_consent(const Value& args) {
    std::string subject = args.find("subject")->as_string();
    std::string algo = args.find("algo")->as_string();
    std::string audience = args.find("audience")->as_string();
    std::int64_t ttl = 365LL * 24 * 3600 * 1000;
    if (const Value* t = args.find("ttl_ms")) ttl = t->as_int();
    auto consent = grant_consent(keys_.at(subject), algo, audience, now_, ttl);
    enqueue_message(subject, audience,
                    Value::map({{"consent", consent.to_value()}, {"kind", "consent_grant"}}));
}

void Simulation::do_initiate_transfer(const Value& args) {
    std::string vasp = args.find("vasp")->as_string();
    std::string originator = args.find("originator")->as_string();
    enqueue_message(originator, vasp,
                    Value::map({
                        {"amount", *args.find("amount")},
                        {"beneficiary", *args.find("beneficiary")},
                        {"beneficiary_account", *args.find("beneficiary_account")},
                        {"beneficiary_name", *args.find("beneficiary_name")},
                        {"beneficiary_vasp", *args.find("beneficiary_vasp")},
                        {"kind", "transfer_request"},
                        {"originator", originator},
                    }));
}

void Simulation::do_register_endpoint(const Value& args) {
    if (!config_.resolver) return;
    std::string did = args.find("did")->as_string();
    std::string cp = args.find("claims_provider")->as_string();
    std::string address = "bus://" + cp;
    if (const Value* a = args.find("address")) address = a->as_string();
    std::string subject;
    for (const auto& b : config_.resolver->dids) {
        if (b.did == did) subject = b.subject;
    }
    std::int64_t recorded_at = now_;
    if (const Value* t = args.find("recorded_at")) recorded_at = t->as_int();
    auto record = make_endpoint_record(keys_.at(subject), did, cp, address, recorded_at);
    enqueue_message(subject, config_.resolver->id,
                    Value::map({{"kind", "register_endpoint"}, {"record", record.to_value()}}));
}

void Simulation::install_fault(const std::string& event, const Value& args) {
    FaultRule rule;
    if (const Value* f = args.find("from")) rule.pattern.from_node = f->as_string();
    if (const Value* t = args.find("to")) rule.pattern.to_node = t->as_string();
    if (const Value* k = args.find("kind")) rule.pattern.kind = k->as_string();
    if (const Value* m = args.find("max")) rule.remaining = m->as_int();
    if (event == "drop_message") {
        rule.action = FaultActionKind::drop;
    } else if (event == "delay_message") {
        rule.action = FaultActionKind::delay;
        rule.delay_ms = args.find("delay_ms")->as_int();
    } else if (event == "duplicate_message") {
        rule.action = FaultActionKind::duplicate;
    } else {
        return;
    }
    faults_.push_back(std::move(rule));
}

Result<void> Simulation::settle(const std::string& transfer_id, const std::string& from_vasp,
                                const std::string& from_account, const std::string& to_vasp,
                                const std::string& to_account, std::int64_t amount) {
    if (!settled_.insert(transfer_id).second) return ok();  // exactly once
    VaspNode* from = vasp(from_vasp);
    VaspNode* to = vasp(to_vasp);
    if (from == nullptr || to == nullptr) {
        return make_error(ErrorCode::not_found, "settlement endpoints unknown");
    }
    CEN_CHECK_OK(from->debit(from_account, amount));
    CEN_CHECK_OK(to->credit(to_account, amount));
    trace(Value::map({
        {"amount", amount},
        {"event", "settle"},
        {"from_account", from_account},
        {"from_vasp", from_vasp},
        {"to_account", to_account},
        {"to_vasp", to_vasp},
        {"transfer_id", transfer_id},
    }));
    return ok();
}

Result<void> Simulation::run() {
    if (!ran_) {
        CEN_CHECK_OK(setup());
        ran_ = true;
    }
    constexpr std::int64_t kEventLimit = 2'000'000;
    std::int64_t processed = 0;
    while (!queue_.empty()) {
        Event event = *queue_.begin();
        queue_.erase(queue_.begin());
        now_ = event.at;
        dispatch(event);
        if (++processed > kEventLimit) {
            return make_error(ErrorCode::invalid_argument, "event limit exceeded");
        }
    }
    return ok();
}

SimResult Simulation::result() const {
    SimResult out;
    out.trace = trace_;
    KeyLookup keys = directory_.key_lookup();

    auto checkpoint = [&](const std::string& id, const AuditLog& log) {
        auto payload = must_canonicalize(Value::map({
            {"head_hash", log.head_hash()},
            {"length", static_cast<std::int64_t>(log.size())},
            {"node_id", id},
        }));
        return sign_envelope(keys_.at(id), PayloadType::log_checkpoint, std::move(payload), now_)
            .to_value();
    };

    for (const auto& [id, node] : nodes_) {
        const AuditLog* log = const_cast<Node&>(*node).audit_log();
        if (log == nullptr) continue;
        out.logs.emplace(id, *log);
        out.checkpoints.emplace(id, checkpoint(id, *log));
    }
    for (const auto& [id, state] : registries_) {
        out.logs.emplace(id, state.log);
        out.checkpoints.emplace(id, checkpoint(id, state.log));
    }

    Value::List transfer_exports;
    Value::List balance_exports;
    std::int64_t total = 0;
    for (const auto& [id, vasp] : vasps_) {
        transfer_exports.push_back(vasp->export_transfers());
        balance_exports.push_back(vasp->export_balances());
        for (const auto& [account, balance] : vasp->accounts()) total += balance;
    }
    out.transfers = Value::map({{"vasps", Value(std::move(transfer_exports))}});
    out.balances =
        Value::map({{"total", total}, {"vasps", Value(std::move(balance_exports))}});
    out.report = build_report(out.logs, out.transfers, keys);
    out.keys = directory_.keys_value();
    out.algorithms = algo_registry_.to_value();

    for (const auto& [cp_id, node] : cps_) {
        const ClaimsProvider& core = const_cast<ClaimsProviderNode*>(node)->core();
        for (const auto& [subject, store] : core.stores()) {
            Value::List entries;
            for (const auto& cs : store.stored()) {
                entries.push_back(Value::map({
                    {"envelope", cs.envelope.to_value()},
                    {"issuer_public_key", core.public_key()},
                }));
            }
            out.pds.emplace(cp_id + "/" + subject,
                            Value::map({
                                {"claimsets", Value(std::move(entries))},
                                {"issuer_id", cp_id},
                                {"subject_id", subject},
                            }));
        }
    }
    if (resolver_node_ != nullptr) {
        out.resolver_dump = const_cast<ResolverNode*>(resolver_node_)->core().dump();
    }
    return out;
}

std::int64_t SimResult::total_balance() const {
    return balances.find("total")->as_int();
}

std::map<std::string, std::string> SimResult::render() const {
    std::map<std::string, std::string> files;
    std::string trace_text;
    for (const auto& event : trace) {
        trace_text += must_canonicalize(event);
        trace_text.push_back('\n');
    }
    files.emplace("trace.log", std::move(trace_text));
    for (const auto& [id, log] : logs) {
        files.emplace("logs/" + id + ".log", log.serialize());
    }
    for (const auto& [id, cp] : checkpoints) {
        files.emplace("checkpoints/" + id + ".json", must_canonicalize(cp) + "\n");
    }
    files.emplace("transfers.json", must_canonicalize(transfers) + "\n");
    files.emplace("balances.json", must_canonicalize(balances) + "\n");
    files.emplace("report.json", must_canonicalize(report) + "\n");
    files.emplace("keys.json", must_canonicalize(keys) + "\n");
    files.emplace("algorithms.json", must_canonicalize(algorithms) + "\n");
    for (const auto& [path, store] : pds) {
        files.emplace("pds/" + path + ".json", must_canonicalize(store) + "\n");
    }
    if (!resolver_dump.empty()) {
        files.emplace("resolver.log", resolver_dump);
    }
    return files;
}

std::int64_t RunContext::now() const { return sim_.now_; }

void RunContext::send(const std::string& to, const Value& body) {
    sim_.enqueue_message(node_id_, to, body);
}

void RunContext::set_timer(std::int64_t delay_ms, const std::string& key) {
    sim_.enqueue_timer(node_id_, sim_.now_ + delay_ms, key);
}

const Directory& RunContext::directory() const { return sim_.directory_; }

Settlement& RunContext::settlement() { return sim_; }

void RunContext::note(const std::string& text) {
    sim_.trace(Value::map({{"event", "note"}, {"text", text}}));
}

// ---------------------------------------------------------------------------
// Public entry points

Result<SimResult> run_scenario(const ScenarioConfig& config) {
    Simulation sim(config);
    CEN_CHECK_OK(sim.run());
    return sim.result();
}

ScenarioRun::ScenarioRun(const ScenarioConfig& config) : sim_(new Simulation(config)) {}
ScenarioRun::~ScenarioRun() = default;
ScenarioRun::ScenarioRun(ScenarioRun&&) noexcept = default;
ScenarioRun& ScenarioRun::operator=(ScenarioRun&&) noexcept = default;

Result<void> ScenarioRun::run() { return sim_->run(); }
SimResult ScenarioRun::result() const { return sim_->result(); }
VaspNode* ScenarioRun::vasp(std::string_view id) { return sim_->vasp(id); }
ClaimsProvider* ScenarioRun::claims_provider(std::string_view id) {
    return sim_->claims_provider(id);
}
KeyRegistry* ScenarioRun::registry(std::string_view id) { return sim_->registry(id); }
DidResolver* ScenarioRun::resolver() { return sim_->resolver(); }
const Directory& ScenarioRun::directory() const { return sim_->directory(); }
const KeyPair& ScenarioRun::subject_key(std::string_view id) const {
    return sim_->subject_key(id);
}

}  // namespace cen
