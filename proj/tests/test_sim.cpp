#include "cen/scenario.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cen/report.hpp"
#include "scenario_helpers.hpp"

using namespace cen;
using namespace cen::testing;

TEST_CASE("baseline transfer finalizes on both sides") {
    auto result = run_scenario(baseline_scenario()).value();
    CHECK(side_state(result, "vaspA") == "Finalized");
    CHECK(side_state(result, "vaspB") == "Finalized");
    CHECK(account_balance(result, "vaspA", "acct-alice") == 99'000);
    CHECK(account_balance(result, "vaspB", "acct-bob") == 51'000);
    CHECK(result.total_balance() == 150'000);

    // all retention logs chain correctly and the report says so
    for (const auto& [node, healthy] : result.report.find("log_chains")->as_map()) {
        CHECK(healthy.as_bool());
    }
    const auto& transfers = result.report.find("transfers")->as_list();
    REQUIRE(transfers.size() == 1);
    CHECK(transfers[0].find("travel_rule_complete")->as_bool());
    CHECK(transfers[0].find("receipts_complete")->as_bool());
    CHECK(transfers[0].find("claims_retained")->as_bool());
    CHECK(transfers[0].find("field_groups")->as_list().size() == 5);
}

TEST_CASE("runs are byte-deterministic for a fixed seed") {
    auto a = run_scenario(baseline_scenario()).value().render();
    auto b = run_scenario(baseline_scenario()).value().render();
    REQUIRE(a.size() == b.size());
    for (const auto& [path, bytes] : a) {
        REQUIRE(b.contains(path));
        CHECK(bytes == b.at(path));
    }
}

TEST_CASE("different seeds with jitter reach the same final state") {
    auto cfg = baseline_scenario();
    cfg.jitter_min_ms = 0;
    cfg.jitter_max_ms = 7;
    cfg.seed = 42;
    auto first = run_scenario(cfg).value();
    cfg.seed = 43;
    auto second = run_scenario(cfg).value();
    CHECK(side_state(first, "vaspA") == "Finalized");
    CHECK(side_state(second, "vaspA") == "Finalized");
    CHECK(side_state(second, "vaspB") == "Finalized");
    CHECK(first.total_balance() == second.total_balance());
    CHECK(account_balance(first, "vaspB", "acct-bob") ==
          account_balance(second, "vaspB", "acct-bob"));
}

TEST_CASE("every delivered message verifies on the bus") {
    auto result = run_scenario(baseline_scenario()).value();
    int deliveries = 0;
    for (const auto& event : result.trace) {
        const std::string kind = event.find("event")->as_string();
        CHECK(kind != "reject");
        if (kind == "deliver") ++deliveries;
    }
    CHECK(deliveries > 10);
}

TEST_CASE("dropping countersignatures rejects both sides with ReceiptMissing") {
    auto cfg = baseline_scenario();
    cfg.script.insert(cfg.script.begin(),
                      {0, "drop_message", Value::map({{"kind", "exchange_receipt"}})});
    auto result = run_scenario(cfg).value();
    for (const char* vasp : {"vaspA", "vaspB"}) {
        const Value* side = find_side(result, vasp);
        REQUIRE(side != nullptr);
        CHECK(side->find("state")->as_string() == "Rejected");
        CHECK(side->find("reason")->find("code")->as_string() == "ReceiptMissing");
    }
    // no asset movement happened
    CHECK(account_balance(result, "vaspA", "acct-alice") == 100'000);
    CHECK(account_balance(result, "vaspB", "acct-bob") == 50'000);
    CHECK(result.total_balance() == 150'000);
    // the attempted delivery is retained in both logs
    const auto& transfers = result.report.find("transfers")->as_list();
    REQUIRE(transfers.size() == 1);
    CHECK(transfers[0].find("travel_rule_complete")->as_bool());
    CHECK_FALSE(transfers[0].find("receipts_complete")->as_bool());
}

TEST_CASE("duplicate deliveries never change the outcome") {
    auto baseline = run_scenario(baseline_scenario()).value();
    auto cfg = baseline_scenario();
    cfg.script.insert(cfg.script.begin(),
                      {0, "duplicate_message", Value::map({{"kind", "packet_delivery"}})});
    auto duplicated = run_scenario(cfg).value();
    CHECK(side_state(duplicated, "vaspA") == "Finalized");
    CHECK(side_state(duplicated, "vaspB") == "Finalized");
    CHECK(account_balance(duplicated, "vaspB", "acct-bob") ==
          account_balance(baseline, "vaspB", "acct-bob"));
    CHECK(duplicated.total_balance() == baseline.total_balance());
    // exactly one countersignature per direction despite the duplicates
    int receipts = 0;
    for (const auto& event : duplicated.trace) {
        if (event.find("event")->as_string() == "deliver" &&
            event.find("kind")->as_string() == "exchange_receipt") {
            ++receipts;
        }
    }
    CHECK(receipts == 2);
}

TEST_CASE("delaying the claims response past the timeout stalls the transfer") {
    auto cfg = baseline_scenario();
    cfg.script.insert(cfg.script.begin(),
                      {0, "delay_message",
                       Value::map({{"delay_ms", 60'000},
                                   {"kind", "claims_response"},
                                   {"to", "vaspA"}})});
    auto result = run_scenario(cfg).value();
    const Value* side = find_side(result, "vaspA");
    REQUIRE(side != nullptr);
    CHECK(side->find("state")->as_string() == "Initiated");
    CHECK(side->find("last_error")->find("code")->as_string() == "ClaimsUnavailable");
    CHECK(result.total_balance() == 150'000);
}

TEST_CASE("blocked jurisdictions reject before any packet is sent") {
    auto cfg = baseline_scenario();
    for (auto& vasp : cfg.vasps) {
        if (vasp.id == "vaspA") {
            vasp.policy.push_back({"DE", PolicyMode::blocked, ""});
        }
    }
    auto result = run_scenario(cfg).value();
    const Value* side = find_side(result, "vaspA");
    REQUIRE(side != nullptr);
    CHECK(side->find("state")->as_string() == "Rejected");
    CHECK(side->find("reason")->find("code")->as_string() == "PolicyBlocked");
    CHECK(find_side(result, "vaspB") == nullptr);  // never announced
    for (const auto& event : result.trace) {
        if (event.find("event")->as_string() != "deliver") continue;
        CHECK(event.find("kind")->as_string() != "packet_delivery");
    }
}

TEST_CASE("require_extra_claim policy is enforced on delivered claims") {
    auto cfg = baseline_scenario();
    for (auto& vasp : cfg.vasps) {
        if (vasp.id == "vaspB") {
            vasp.policy.push_back({"US", PolicyMode::require_extra_claim, "residency"});
        }
    }
    SUBCASE("missing extra claim blocks the exchange") {
        auto result = run_scenario(cfg).value();
        const Value* side = find_side(result, "vaspB");
        REQUIRE(side != nullptr);
        CHECK(side->find("state")->as_string() == "Rejected");
        CHECK(side->find("reason")->find("code")->as_string() == "PolicyBlocked");
    }
    SUBCASE("delivering the required claim satisfies the policy") {
        for (auto& vasp : cfg.vasps) {
            if (vasp.id == "vaspA") vasp.gather_algos = {"tx-range", "residency"};
        }
        cfg.script.insert(cfg.script.begin(),
                          {1, "grant_consent", Value::map({{"algo", "residency"},
                                                           {"audience", "cp1"},
                                                           {"subject", "alice"}})});
        auto result = run_scenario(cfg).value();
        CHECK(side_state(result, "vaspA") == "Finalized");
        CHECK(side_state(result, "vaspB") == "Finalized");
    }
}

TEST_CASE("discovery through the resolver reaches the claims provider") {
    auto cfg = baseline_scenario();
    cfg.resolver = ScenarioConfig::ResolverCfg{"resolver1", {{"did:cen:alice", "alice"}}};
    for (auto& vasp : cfg.vasps) {
        if (vasp.id == "vaspA") {
            vasp.customers[0].claims_provider.clear();
            vasp.customers[0].did = "did:cen:alice";
        }
    }
    cfg.script.insert(cfg.script.begin(),
                      {2, "register_endpoint", Value::map({{"claims_provider", "cp1"},
                                                           {"did", "did:cen:alice"}})});
    auto result = run_scenario(cfg).value();
    CHECK(side_state(result, "vaspA") == "Finalized");
    CHECK(side_state(result, "vaspB") == "Finalized");
    bool resolved = false;
    for (const auto& event : result.trace) {
        if (event.find("event")->as_string() == "deliver" &&
            event.find("kind")->as_string() == "resolve_response") {
            resolved = true;
        }
    }
    CHECK(resolved);
}

TEST_CASE("skipping onboarding stalls at counterparty verification") {
    auto cfg = baseline_scenario();
    std::erase_if(cfg.script, [](const auto& e) {
        return e.event == "onboard" && e.args.find("subject")->as_string() == "alice";
    });
    auto result = run_scenario(cfg).value();
    const Value* side = find_side(result, "vaspA");
    REQUIRE(side != nullptr);
    CHECK(side->find("state")->as_string() == "ClaimsGathered");
    CHECK(side->find("last_error")->find("code")->as_string() == "OwnershipUnattested");
    CHECK(result.total_balance() == 150'000);
}

TEST_CASE("custody onboarding verifies through the custody attestation") {
    auto cfg = baseline_scenario();
    for (auto& e : cfg.script) {
        if (e.event == "onboard" && e.args.find("subject")->as_string() == "alice") {
            e.args.set("mode", "custody");
        }
    }
    auto result = run_scenario(cfg).value();
    CHECK(side_state(result, "vaspA") == "Finalized");
    CHECK(side_state(result, "vaspB") == "Finalized");
}

TEST_CASE("scenario validation reports the first offending reference") {
    auto cfg = baseline_scenario();
    cfg.script.push_back({200, "initiate_transfer",
                          Value::map({{"amount", 5},
                                      {"beneficiary", "bob"},
                                      {"beneficiary_account", "acct-bob"},
                                      {"beneficiary_name", "Bob"},
                                      {"beneficiary_vasp", "vaspZ"},
                                      {"originator", "alice"},
                                      {"vasp", "vaspA"}})});
    auto r = run_scenario(cfg);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error().code == ErrorCode::config_invalid);
    CHECK(r.error().detail.find("vaspZ") != std::string::npos);
}

TEST_CASE("scenario config survives a document round trip") {
    auto cfg = baseline_scenario();
    auto doc = must_canonicalize(cfg.to_value());
    auto parsed = ScenarioConfig::from_value(parse_document(doc).value());
    REQUIRE(parsed.ok());
    CHECK(must_canonicalize(parsed.value().to_value()) == doc);
    auto result = run_scenario(parsed.value()).value();
    CHECK(side_state(result, "vaspA") == "Finalized");
    // identical outputs whether built in memory or parsed back
    CHECK(run_scenario(cfg).value().render() == result.render());
}

TEST_CASE("issued claim sets equal the stores mirrored per subject") {
    ScenarioRun run(baseline_scenario());
    run.run().value();
    auto result = run.result();

    // claims delivered over the bus, deduplicated by msg_id
    std::map<std::string, std::vector<std::string>> delivered;  // subject -> payload hashes
    std::set<std::int64_t> seen;
    for (const auto& event : result.trace) {
        if (event.find("event")->as_string() != "deliver") continue;
        if (event.find("kind")->as_string() != "claims_response") continue;
        if (!seen.insert(event.find("msg_id")->as_int()).second) continue;
        auto env = SignedEnvelope::from_value(*event.find("envelope")).value();
        auto body = parse_canonical(env.payload).value();
        const Value* claimset = body.find("claimset");
        if (claimset == nullptr) continue;
        auto cs_env = SignedEnvelope::from_value(*claimset).value();
        auto cs = ClaimSet::from_envelope(cs_env).value();
        delivered[cs.subject_id].push_back(base64url_encode(sha256(cs.envelope.payload)));
    }

    ClaimsProvider* cp = run.claims_provider("cp1");
    REQUIRE(cp != nullptr);
    std::size_t mirrored_total = 0;
    for (const auto& [subject, store] : cp->stores()) {
        std::vector<std::string> mirrored;
        for (const auto& cs : store.stored()) {
            mirrored.push_back(base64url_encode(sha256(cs.envelope.payload)));
        }
        auto wanted = delivered[subject];
        std::sort(wanted.begin(), wanted.end());
        std::sort(mirrored.begin(), mirrored.end());
        CHECK(wanted == mirrored);
        mirrored_total += mirrored.size();
    }
    CHECK(mirrored_total == 2);  // one claim set per customer side
}

TEST_CASE("receipt chain reconstructs from the two logs alone") {
    auto result = run_scenario(baseline_scenario()).value();
    KeyLookup keys = [&](std::string_view id) -> std::optional<Bytes> {
        const Value* participants = result.keys.find("participants");
        const Value* entry = participants->find(id);
        if (entry == nullptr) return std::nullopt;
        return get_bytes(*entry, "public_key").value();
    };
    const AuditLog& log_a = result.logs.at("vaspA");
    const AuditLog& log_b = result.logs.at("vaspB");
    const Value* side = find_side(result, "vaspA");
    std::string tid = side->find("transfer_id")->as_string();

    auto forward = reconstruct_receipt(log_a, log_b, tid, "vaspA", "vaspB", keys);
    REQUIRE(forward.ok());
    auto backward = reconstruct_receipt(log_b, log_a, tid, "vaspB", "vaspA", keys);
    REQUIRE(backward.ok());

    // deniability: removing the countersignature from one log breaks the chain
    AuditLog pruned = log_a;
    auto& entries = pruned.mutable_entries();
    Bytes counter_hash = envelope_hash(forward.value().receiver_countersignature);
    std::erase_if(entries, [&](const LogEntry& e) {
        return envelope_hash(e.envelope) == counter_hash;
    });
    CHECK_FALSE(verify_chain(pruned, keys));
    CHECK_FALSE(reconstruct_receipt(pruned, log_b, tid, "vaspA", "vaspB", keys).ok());
}

TEST_CASE("confidential transport marks messages sealed and claims stay on path") {
    auto cfg = baseline_scenario();
    cfg.confidential_transport = true;
    auto result = run_scenario(cfg).value();
    for (const auto& event : result.trace) {
        if (event.find("event")->as_string() != "deliver") continue;
        CHECK(event.find("sealed")->as_bool());
        // claim material only ever goes to claims providers or VASPs
        auto env = SignedEnvelope::from_value(*event.find("envelope")).value();
        if (env.payload.find("\"claims\":") != std::string::npos) {
            std::string to = event.find("to")->as_string();
            CHECK((to.starts_with("vasp") || to.starts_with("cp")));
        }
    }
    CHECK(side_state(result, "vaspA") == "Finalized");
}

TEST_CASE("a finalize notice overtaking the last countersignature still finalizes") {
    // Delay the countersignature headed for the beneficiary so the
    // originator's finalize notice arrives first.
    auto cfg = baseline_scenario();
    cfg.script.insert(cfg.script.begin(),
                      {0, "delay_message",
                       Value::map({{"delay_ms", 50},
                                   {"kind", "exchange_receipt"},
                                   {"max", 1},
                                   {"to", "vaspB"}})});
    auto result = run_scenario(cfg).value();
    CHECK(side_state(result, "vaspA") == "Finalized");
    CHECK(side_state(result, "vaspB") == "Finalized");
    CHECK(account_balance(result, "vaspB", "acct-bob") == 51'000);
}

TEST_CASE("jitter interleavings never leave a transfer half-finalized") {
    // The notice may race the final countersignature but can never be lost,
    // and no interleaving may strand an exchange mid-flight.
    for (std::uint64_t seed : {7, 13, 42, 99, 1234}) {
        auto cfg = fuzz_scenario(seed);
        cfg.seed = seed;
        cfg.jitter_min_ms = 0;
        cfg.jitter_max_ms = 1 + static_cast<std::int64_t>(seed % 20);
        auto result = run_scenario(cfg).value();
        for (const auto& vasp_export : result.transfers.find("vasps")->as_list()) {
            for (const auto& record : vasp_export.find("transfers")->as_list()) {
                const std::string state = record.find("state")->as_string();
                CHECK(state != "InfoExchanged");
                CHECK(state != "CounterpartyVerified");
            }
        }
        CHECK(result.total_balance() == 122'500);
        for (const auto& [node, healthy] : result.report.find("log_chains")->as_map()) {
            CHECK(healthy.as_bool());
        }
    }
}

TEST_CASE("each VASP can gather from its own claims provider") {
    auto cfg = baseline_scenario();
    ScenarioConfig::CpCfg cp2;
    cp2.id = "cp2";
    cp2.vasps.push_back({"vaspB", "vaspB-secret2", {"tx-range", "residency"}});
    cfg.claims_providers.push_back(cp2);
    for (auto& vasp : cfg.vasps) {
        if (vasp.id == "vaspB") {
            vasp.credentials = {{"cp2", "vaspB-secret2"}};
            vasp.customers[0].claims_provider = "cp2";
        }
    }
    for (auto& e : cfg.script) {
        if (e.event == "grant_consent" && e.args.find("subject")->as_string() == "bob") {
            e.args.set("audience", "cp2");
        }
    }
    ScenarioRun run(cfg);
    run.run().value();
    auto result = run.result();
    CHECK(side_state(result, "vaspA") == "Finalized");
    CHECK(side_state(result, "vaspB") == "Finalized");
    // each provider mirrored exactly its own subject's claims
    REQUIRE(run.claims_provider("cp1")->pds("alice") != nullptr);
    REQUIRE(run.claims_provider("cp2")->pds("bob") != nullptr);
    CHECK(run.claims_provider("cp1")->pds("bob") == nullptr);
    CHECK(run.claims_provider("cp2")->pds("alice") == nullptr);
}

TEST_CASE("no output byte sequence reveals a private key") {
    for (auto cfg : {baseline_scenario(), fuzz_scenario(42)}) {
        auto result = run_scenario(cfg).value();
        // Re-derive every participant key the way the harness does and scan
        // all rendered outputs for any encoding of the secret half.
        std::vector<std::string> needles;
        for (const auto& [id, entry] : result.keys.find("participants")->as_map()) {
            (void)entry;
            KeyPair kp = keypair_from_seed(id, derive_seed(cfg.seed, "key:" + id));
            needles.push_back(base64url_encode(kp.private_key));
            needles.push_back(base64url_encode(std::span(kp.private_key.data.data(), 32)));
            needles.emplace_back(kp.private_key.data.begin(), kp.private_key.data.end());
        }
        for (const auto& [path, bytes] : result.render()) {
            for (const auto& needle : needles) {
                CHECK(bytes.find(needle) == std::string::npos);
            }
            (void)path;
        }
    }
}

TEST_CASE("no delivered claim derives from an algorithm outside the token scope") {
    auto result = run_scenario(fuzz_scenario(42)).value();
    std::map<std::string, std::set<std::string>> scope_of_request;
    int claimsets_checked = 0;
    for (const auto& event : result.trace) {
        if (event.find("event")->as_string() != "deliver") continue;
        auto env = SignedEnvelope::from_value(*event.find("envelope")).value();
        auto body = parse_canonical(env.payload).value();
        const std::string kind = event.find("kind")->as_string();
        if (kind == "claims_request") {
            auto request = ClaimsRequest::from_value(*body.find("request")).value();
            scope_of_request[request.request_id] = {request.token.allowed_algos.begin(),
                                                    request.token.allowed_algos.end()};
        } else if (kind == "claims_response") {
            const Value* claimset = body.find("claimset");
            if (claimset == nullptr) continue;
            auto cs =
                ClaimSet::from_envelope(SignedEnvelope::from_value(*claimset).value()).value();
            const std::string request_id = body.find("request_id")->as_string();
            REQUIRE(scope_of_request.contains(request_id));
            const auto& allowed = scope_of_request[request_id];
            for (const auto& claim : cs.claims) {
                for (const auto& p : claim.provenance) {
                    CHECK(allowed.contains(p.algo_id));
                }
            }
            ++claimsets_checked;
        }
    }
    CHECK(claimsets_checked > 5);
}

TEST_CASE("attestations chaining to an untrusted root stall the transfer") {
    auto cfg = baseline_scenario();
    cfg.roots.push_back("root2");
    cfg.registries.push_back({"reg2", "root2", 365LL * 24 * 3600 * 1000, {"alice"}});
    for (auto& vasp : cfg.vasps) {
        if (vasp.id == "vaspA") vasp.registry = "reg2";  // trusted_roots stays {root1}
    }
    auto result = run_scenario(cfg).value();
    const Value* side = find_side(result, "vaspA");
    REQUIRE(side != nullptr);
    CHECK(side->find("state")->as_string() == "ClaimsGathered");
    CHECK(side->find("last_error")->find("code")->as_string() == "UntrustedRoot");
    CHECK(result.total_balance() == 150'000);
}

TEST_CASE("datasets can be ingested from record-per-line files") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "cen_dataset_ingest";
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "tx.records");
        for (std::int64_t amount : {120, 450, 80, 900, 300, 150}) {
            out << must_canonicalize(Value::map({{"fields", Value::map({{"amount", amount}})},
                                                 {"subject", "alice"}}))
                << "\n";
        }
        out << "{\"fields\": {\"amount\": 60}, \"subject\": \"bob\"}\n";  // relaxed form
        out << must_canonicalize(Value::map({{"fields", Value::map({{"amount", 75}})},
                                             {"subject", "bob"}}))
            << "\n";
    }
    auto cfg = baseline_scenario();
    for (auto& provider : cfg.providers) {
        for (auto& ds : provider.datasets) {
            if (ds.dataset_id == "ds-tx") ds.records.clear();
        }
        if (provider.id == "dp1") provider.record_files["ds-tx"] = "tx.records";
    }
    // running without resolving the files is refused
    CHECK(run_scenario(cfg).error().code == ErrorCode::config_invalid);
    load_dataset_files(cfg, dir.string()).value();
    ScenarioRun run(cfg);
    run.run().value();
    auto result = run.result();
    CHECK(side_state(result, "vaspA") == "Finalized");
    const auto& stored = run.claims_provider("cp1")->pds("alice")->stored();
    REQUIRE_FALSE(stored.empty());
    CHECK(stored[0].claims[0].attributes.at("min").as_int() == 80);
    CHECK(stored[0].claims[0].attributes.at("max").as_int() == 900);
}

TEST_CASE("packets are only ever sent after claims and verification succeed") {
    auto result = run_scenario(baseline_scenario()).value();
    std::map<std::string, std::size_t> first_packet, claims_done;
    std::size_t index = 0;
    for (const auto& event : result.trace) {
        ++index;
        if (event.find("event")->as_string() != "deliver") continue;
        const std::string kind = event.find("kind")->as_string();
        const std::string from = event.find("from")->as_string();
        const std::string to = event.find("to")->as_string();
        if (kind == "packet_delivery" && !first_packet.contains(from)) {
            first_packet[from] = index;
        }
        if (kind == "claims_response" && !claims_done.contains(to)) {
            claims_done[to] = index;
        }
    }
    REQUIRE(first_packet.size() == 2);
    for (const auto& [vasp, packet_index] : first_packet) {
        REQUIRE(claims_done.contains(vasp));
        CHECK(claims_done[vasp] < packet_index);
    }
}
