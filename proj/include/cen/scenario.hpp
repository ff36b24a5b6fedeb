#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cen/bus.hpp"
#include "cen/claims_provider.hpp"
#include "cen/data_provider.hpp"
#include "cen/did_resolver.hpp"
#include "cen/key_registry.hpp"
#include "cen/vasp.hpp"

namespace cen {

/// Full declaration of a run: participants, keys are derived from the seed,
/// datasets, policies and an ordered stimulus script. The seed and the
/// config together determine every byte of the outputs.
struct ScenarioConfig {
    std::uint64_t seed = 42;
    bool confidential_transport = false;
    std::int64_t latency_ms = 10;
    std::int64_t jitter_min_ms = 0;
    std::int64_t jitter_max_ms = 0;

    std::vector<std::string> roots;
    std::vector<std::string> subjects;

    struct RegistryCfg {
        std::string id;
        std::string root;
        std::int64_t attestation_ttl_ms = 365LL * 24 * 3600 * 1000;
        std::vector<std::string> enrollments;  // subject ids
    };
    std::vector<RegistryCfg> registries;

    struct ResolverCfg {
        std::string id;
        struct Binding {
            std::string did;
            std::string subject;
        };
        std::vector<Binding> dids;
    };
    std::optional<ResolverCfg> resolver;

    std::vector<AlgorithmDescriptor> algorithms;

    struct ProviderCfg {
        std::string id;
        std::int64_t k_min = 5;
        std::vector<Dataset> datasets;
        std::vector<std::pair<std::string, std::string>> serves;  // algo -> dataset
        /// dataset id -> record-per-line file, merged by load_dataset_files().
        std::map<std::string, std::string> record_files;
    };
    std::vector<ProviderCfg> providers;

    struct CpCfg {
        std::string id;
        ClaimsProviderOptions options;
        struct VaspEnrollment {
            std::string vasp_id;
            std::string credential;
            std::vector<std::string> entitled_algos;
        };
        std::vector<VaspEnrollment> vasps;
    };
    std::vector<CpCfg> claims_providers;

    struct CustomerCfg {
        std::string subject;
        std::string account;
        std::int64_t balance = 0;
        std::string name;
        LocatorKind locator_kind = LocatorKind::geographic_address;
        std::string locator_value;
        std::string claims_provider;  // or
        std::string did;
    };
    struct PolicyCfg {
        std::string jurisdiction;
        PolicyMode mode = PolicyMode::allowed;
        std::string required_algo;
    };
    struct VaspCfg {
        std::string id;
        std::string jurisdiction;
        std::string registry;
        std::vector<std::string> trusted_roots;
        std::vector<std::string> gather_algos;
        std::map<std::string, std::string> credentials;
        std::vector<PolicyCfg> policy;
        PolicyMode policy_default = PolicyMode::allowed;
        std::int64_t receipt_timeout_ms = 10'000;
        std::int64_t request_timeout_ms = 10'000;
        std::vector<CustomerCfg> customers;
    };
    std::vector<VaspCfg> vasps;

    struct ScriptEvent {
        std::int64_t at = 0;
        std::string event;
        Value args;  // event-specific fields
    };
    std::vector<ScriptEvent> script;

    Value to_value() const;
    static Result<ScenarioConfig> from_value(const Value& doc);

    /// ConfigInvalid naming the first offending reference.
    Result<void> validate() const;
};

struct SimResult {
    std::vector<Value> trace;
    std::map<std::string, AuditLog> logs;             // node id -> log
    std::map<std::string, Value> checkpoints;         // node id -> signed head statement
    Value transfers;                                  // per-VASP transfer outcomes
    Value balances;                                   // per-VASP account balances + total
    Value report;                                     // per-transfer compliance report
    Value keys;                                       // participant public keys
    Value algorithms;                                 // the published registry document
    std::map<std::string, Value> pds;                 // "cp/subject" -> store export
    std::string resolver_dump;

    std::int64_t total_balance() const;
    /// Byte-exact output files, path -> contents.
    std::map<std::string, std::string> render() const;
};

class Simulation;

/// Resolves per-dataset record files (one canonical record per line,
/// `{"fields":{...},"subject":...}`) relative to `base_dir`, appending the
/// rows to the inline records. Run before the scenario starts.
Result<void> load_dataset_files(ScenarioConfig& config, const std::string& base_dir);

/// Validates, wires and runs a scenario to quiescence.
Result<SimResult> run_scenario(const ScenarioConfig& config);

/// Same, keeping the simulation alive for white-box inspection.
class ScenarioRun {
  public:
    explicit ScenarioRun(const ScenarioConfig& config);
    ~ScenarioRun();
    ScenarioRun(ScenarioRun&&) noexcept;
    ScenarioRun& operator=(ScenarioRun&&) noexcept;

    Result<void> run();
    SimResult result() const;

    VaspNode* vasp(std::string_view id);
    ClaimsProvider* claims_provider(std::string_view id);
    KeyRegistry* registry(std::string_view id);
    DidResolver* resolver();
    const Directory& directory() const;
    const KeyPair& subject_key(std::string_view id) const;

  private:
    std::unique_ptr<Simulation> sim_;
};

}  // namespace cen
