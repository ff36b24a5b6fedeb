#include "cen/vasp.hpp"

#include <doctest.h>

#include "cen/did_resolver.hpp"

using namespace cen;

namespace {

struct MockSettlement : Settlement {
    struct Call {
        std::string transfer_id, from_vasp, from_account, to_vasp, to_account;
        std::int64_t amount;
    };
    std::vector<Call> calls;
    std::set<std::string> settled;

    Result<void> settle(const std::string& transfer_id, const std::string& from_vasp,
                        const std::string& from_account, const std::string& to_vasp,
                        const std::string& to_account, std::int64_t amount) override {
        if (!settled.insert(transfer_id).second) return ok();
        calls.push_back({transfer_id, from_vasp, from_account, to_vasp, to_account, amount});
        return ok();
    }
};

struct MockCtx : NodeContext {
    std::int64_t t = 1000;
    Directory dir;
    MockSettlement rail;
    std::vector<std::pair<std::string, Value>> sent;
    std::vector<std::pair<std::int64_t, std::string>> timers;
    std::vector<std::string> notes;

    std::int64_t now() const override { return t; }
    void send(const std::string& to, const Value& body) override { sent.emplace_back(to, body); }
    void set_timer(std::int64_t delay_ms, const std::string& key) override {
        timers.emplace_back(t + delay_ms, key);
    }
    const Directory& directory() const override { return dir; }
    Settlement& settlement() override { return rail; }
    void note(const std::string& text) override { notes.push_back(text); }
};

constexpr std::int64_t kYear = 365LL * 24 * 3600 * 1000;

struct Fixture {
    KeyPair root = keypair_from_seed("root1", derive_seed(55, "root1"));
    KeyPair vasp_a_key = keypair_from_seed("vaspA", derive_seed(55, "vaspA"));
    KeyPair vasp_b_key = keypair_from_seed("vaspB", derive_seed(55, "vaspB"));
    KeyPair alice = keypair_from_seed("alice", derive_seed(55, "alice"));
    KeyRegistry registry{keypair_from_seed("reg1", derive_seed(55, "reg1")),
                         derive_seed(55, "reg1:nonce"), kYear};
    MockCtx ctx;

    Fixture() {
        registry.set_authority_chain({sign_authority_link(
            root, "reg1", registry.public_key(), 0, 10 * kYear, 0)});
        registry.enroll("alice", alice.public_key);
        ctx.dir.add({"root1", "root", root.public_key, ""});
        ctx.dir.add({"vaspA", "vasp", vasp_a_key.public_key, "US"});
        ctx.dir.add({"vaspB", "vasp", vasp_b_key.public_key, "DE"});
        ctx.dir.add({"alice", "subject", alice.public_key, ""});
        ctx.dir.add({"reg1", "registry", registry.public_key(), ""});
    }

    VaspOptions options() const {
        VaspOptions o;
        o.jurisdiction = "US";
        o.trusted_roots = {{"root1", root.public_key}};
        o.gather_algos = {"tx-range"};
        o.credentials = {{"cp1", "secret"}};
        return o;
    }

    VaspNode node() {
        VaspNode n(vasp_a_key, options(), ctx.dir.key_lookup());
        CustomerAccount alice_acct;
        alice_acct.subject_id = "alice";
        alice_acct.account_id = "acct-alice";
        alice_acct.name = "Alice Doe";
        alice_acct.locator_kind = LocatorKind::national_identity_number;
        alice_acct.locator_value = "US-1";
        alice_acct.claims_provider = "cp1";
        n.add_customer(alice_acct, 10'000);
        return n;
    }

    KeyOwnershipAttestation attested_alice(std::int64_t now = 1000) {
        auto challenge = registry.issue_challenge(alice.public_key, now);
        KeyRegistry::PossessionProof proof{
            challenge, sign_detached(alice, possession_signing_input(challenge))};
        return registry.issue_ownership("alice", alice.public_key, proof, now).value();
    }

    TravelRulePacket packet() const {
        TravelRulePacket p;
        p.transfer_id = "vaspA-t0";
        p.originator_name = "Alice Doe";
        p.originator_account = "acct-alice";
        p.locator_kind = LocatorKind::national_identity_number;
        p.locator_value = "US-1";
        p.beneficiary_name = "Bob Roe";
        p.beneficiary_account = "acct-bob";
        return p;
    }
};

}  // namespace

TEST_CASE("travel rule packet requires all five field groups") {
    Fixture f;
    Value complete = f.packet().to_value();
    CHECK(TravelRulePacket::from_value(complete).ok());

    int rejected = 0;
    for (const char* group : {"originator_name", "originator_account", "originator_locator",
                              "beneficiary_name", "beneficiary_account"}) {
        Value mutated = complete;
        mutated.as_map().erase(group);
        auto r = TravelRulePacket::from_value(mutated);
        REQUIRE_FALSE(r.ok());
        CHECK(r.error().code == ErrorCode::incomplete_packet);
        ++rejected;
    }
    CHECK(rejected == 5);
}

TEST_CASE("locator must hold exactly one variant") {
    Fixture f;
    Value packet = f.packet().to_value();
    packet.set("originator_locator", Value::map({
                                         {"kind", "national_identity_number"},
                                         {"kind2", "geographic_address"},
                                         {"value", "x"},
                                     }));
    CHECK(TravelRulePacket::from_value(packet).error().code == ErrorCode::incomplete_packet);
    packet.set("originator_locator", Value::map({{"kind", "passport_number"}, {"value", "x"}}));
    CHECK_FALSE(TravelRulePacket::from_value(packet).ok());
    // every declared variant is accepted
    for (auto kind : {LocatorKind::geographic_address, LocatorKind::national_identity_number,
                      LocatorKind::customer_identification_number,
                      LocatorKind::date_and_place_of_birth}) {
        auto p = f.packet();
        p.locator_kind = kind;
        CHECK(TravelRulePacket::from_value(p.to_value()).ok());
    }
}

TEST_CASE("receipts verify and resist tampering") {
    Fixture f;
    auto packet_env = sign_envelope(f.vasp_a_key, PayloadType::travel_rule_packet,
                                    must_canonicalize(f.packet().to_value()), 1000);
    auto sender_sig = make_sender_signature(f.vasp_a_key, "vaspA-t0",
                                            envelope_hash(packet_env), 1000);
    auto countersig = make_countersignature(f.vasp_b_key, "vaspA-t0", sender_sig, 1010);
    NonRepudiationReceipt receipt{"vaspA-t0", envelope_hash(packet_env), sender_sig, countersig};

    CHECK(verify_receipt(receipt, f.vasp_a_key.public_key, f.vasp_b_key.public_key).ok());
    CHECK_FALSE(
        verify_receipt(receipt, f.vasp_b_key.public_key, f.vasp_a_key.public_key).ok());

    SUBCASE("tampered delivered hash") {
        receipt.delivered_hash.data[0] ^= 1;
        auto r = verify_receipt(receipt, f.vasp_a_key.public_key, f.vasp_b_key.public_key);
        REQUIRE_FALSE(r.ok());
        CHECK(r.error().code == ErrorCode::receipt_invalid);
    }
    SUBCASE("countersignature over a different sender signature") {
        auto other_sig = make_sender_signature(f.vasp_a_key, "vaspA-t0",
                                               sha256(std::string("other")), 1000);
        receipt.sender_signature = other_sig;
        receipt.delivered_hash = sha256(std::string("other"));
        auto r = verify_receipt(receipt, f.vasp_a_key.public_key, f.vasp_b_key.public_key);
        REQUIRE_FALSE(r.ok());
    }
    SUBCASE("record form round trips") {
        auto round = NonRepudiationReceipt::from_value(
            parse_canonical(must_canonicalize(receipt.to_value())).value());
        REQUIRE(round.ok());
        CHECK(verify_receipt(round.value(), f.vasp_a_key.public_key, f.vasp_b_key.public_key)
                  .ok());
    }
}

TEST_CASE("initiate_transfer preconditions") {
    Fixture f;
    auto node = f.node();
    CHECK(node.initiate_transfer("mallory", "bob", "Bob", "acct-bob", "vaspB", 100, f.ctx)
              .error()
              .code == ErrorCode::unknown_customer);
    CHECK(node.initiate_transfer("alice", "bob", "Bob", "acct-bob", "vaspB", 0, f.ctx)
              .error()
              .code == ErrorCode::invalid_argument);
    CHECK(node.initiate_transfer("alice", "bob", "Bob", "acct-bob", "nobody", 10, f.ctx)
              .error()
              .code == ErrorCode::invalid_argument);
    auto tid = node.initiate_transfer("alice", "bob", "Bob Roe", "acct-bob", "vaspB", 100, f.ctx);
    REQUIRE(tid.ok());
    CHECK(node.transfer(tid.value())->state == TransferState::initiated);
    // pipeline started: the auth request went out to the claims provider
    REQUIRE_FALSE(f.ctx.sent.empty());
    CHECK(f.ctx.sent[0].first == "cp1");
    CHECK(f.ctx.sent[0].second.find("kind")->as_string() == "auth_request");
}

TEST_CASE("counterparty verification demands attested ownership") {
    Fixture f;
    auto node = f.node();
    auto tid = node.initiate_transfer("alice", "bob", "Bob", "acct-bob", "vaspB", 100, f.ctx)
                   .value();
    TransferRecord* record = node.transfer(tid);
    record->state = TransferState::claims_gathered;

    SUBCASE("possession proof alone is not ownership") {
        // alice can answer challenges all day; without an attestation the
        // transfer must not advance
        auto possession =
            f.registry.challenge_possession(f.alice.public_key,
                                            [&](const PossessionChallenge& c) {
                                                return sign_detached(
                                                    f.alice, possession_signing_input(c));
                                            },
                                            1000);
        CHECK(possession.value());
        auto r = node.verify_counterparty(*record, 1000);
        REQUIRE_FALSE(r.ok());
        CHECK(r.error().code == ErrorCode::ownership_unattested);
        CHECK(record->state == TransferState::claims_gathered);
    }
    SUBCASE("attested ownership advances the transfer") {
        node.attach_ownership("alice", f.attested_alice()).value();
        CHECK(node.verify_counterparty(*record, 2000).ok());
        CHECK(record->state == TransferState::counterparty_verified);
    }
    SUBCASE("chain to an untrusted root") {
        auto attestation = f.attested_alice();
        node.attach_ownership("alice", attestation).value();
        VaspOptions stranger = f.options();
        stranger.trusted_roots = {
            {"root2", keypair_from_seed("root2", derive_seed(55, "root2")).public_key}};
        VaspNode other(f.vasp_b_key, stranger, f.ctx.dir.key_lookup());
        CustomerAccount c;
        c.subject_id = "alice";
        c.account_id = "x";
        c.name = "Alice";
        c.locator_value = "v";
        c.ownership = attestation;
        other.add_customer(c, 0);
        TransferRecord rec2 = *record;
        auto r = other.verify_counterparty(rec2, 2000);
        REQUIRE_FALSE(r.ok());
        CHECK(r.error().code == ErrorCode::untrusted_root);
    }
    SUBCASE("expired attestation") {
        node.attach_ownership("alice", f.attested_alice(1000)).value();
        auto r = node.verify_counterparty(*record, 1000 + kYear + 1);
        REQUIRE_FALSE(r.ok());
        CHECK(r.error().code == ErrorCode::attestation_expired);
    }
}

TEST_CASE("finalize settles exactly once and rejects tampered receipts") {
    Fixture f;
    auto node = f.node();
    auto tid = node.initiate_transfer("alice", "bob", "Bob", "acct-bob", "vaspB", 777, f.ctx)
                   .value();
    TransferRecord* record = node.transfer(tid);

    // Fabricate a completed exchange.
    auto packet_a = sign_envelope(f.vasp_a_key, PayloadType::travel_rule_packet,
                                  must_canonicalize(f.packet().to_value()), 1000);
    auto sig_a = make_sender_signature(f.vasp_a_key, tid, envelope_hash(packet_a), 1000);
    auto counter_b = make_countersignature(f.vasp_b_key, tid, sig_a, 1010);
    auto packet_b = sign_envelope(f.vasp_b_key, PayloadType::travel_rule_packet,
                                  must_canonicalize(f.packet().to_value()), 1020);
    auto sig_b = make_sender_signature(f.vasp_b_key, tid, envelope_hash(packet_b), 1020);
    auto counter_a = make_countersignature(f.vasp_a_key, tid, sig_b, 1030);
    record->packet_sent = packet_a;
    record->sender_sig_sent = sig_a;
    record->receipt_for_sent =
        NonRepudiationReceipt{tid, envelope_hash(packet_a), sig_a, counter_b};
    record->packet_received = packet_b;
    record->receipt_issued =
        NonRepudiationReceipt{tid, envelope_hash(packet_b), sig_b, counter_a};
    record->state = TransferState::info_exchanged;

    CHECK(node.finalize(*record, f.ctx).ok());
    CHECK(record->state == TransferState::finalized);
    REQUIRE(f.ctx.rail.calls.size() == 1);
    CHECK(f.ctx.rail.calls[0].amount == 777);
    CHECK(f.ctx.rail.calls[0].from_account == "acct-alice");
    CHECK(f.ctx.rail.calls[0].to_vasp == "vaspB");
    // notice to the counterparty
    CHECK(f.ctx.sent.back().second.find("kind")->as_string() == "finalize_notice");

    SUBCASE("double finalize is idempotent") {
        CHECK(node.finalize(*record, f.ctx).ok());
        CHECK(f.ctx.rail.calls.size() == 1);
    }
    SUBCASE("tampered receipt blocks settlement") {
        record->state = TransferState::info_exchanged;
        record->receipt_for_sent->delivered_hash.data[3] ^= 0xff;
        auto r = node.finalize(*record, f.ctx);
        REQUIRE_FALSE(r.ok());
        CHECK(r.error().code == ErrorCode::receipt_invalid);
        CHECK(f.ctx.rail.calls.size() == 1);  // no extra movement
    }
}

TEST_CASE("claim sets with broken signatures leave the transfer state unchanged") {
    Fixture f;
    KeyPair cp_key = keypair_from_seed("cp1", derive_seed(55, "cp1"));
    KeyPair as_key = keypair_from_seed("cp1.as", derive_seed(55, "cp1.as"));
    f.ctx.dir.add({"cp1", "claims_provider", cp_key.public_key, ""});
    f.ctx.dir.add({"cp1.as", "auth_service", as_key.public_key, ""});

    auto node = f.node();
    auto tid =
        node.initiate_transfer("alice", "bob", "Bob Roe", "acct-bob", "vaspB", 100, f.ctx).value();

    // walk the pipeline: feed the auth response so the node asks for claims
    AlgorithmRegistry registry;
    registry.register_algorithm({"tx-range", "v1", "range", OutputKind::subject_level,
                                 {"amount"}, true})
        .value();
    ClaimsProvider cp(cp_key, as_key, &registry, f.ctx.dir.key_lookup());
    cp.auth().enroll_vasp("vaspA", "secret", {"tx-range"});
    auto token = cp.auth().authenticate("vaspA", "secret", {"tx-range"}, 1000).value();

    auto deliver = [&](const std::string& from, Value body, std::int64_t msg_id) {
        BusMessage msg;
        msg.msg_id = msg_id;
        msg.from_node = from;
        msg.to_node = "vaspA";
        msg.envelope =
            sign_envelope(cp_key, PayloadType::message, must_canonicalize(body), f.ctx.t);
        node.deliver(msg, body, f.ctx);
    };
    deliver("cp1",
            Value::map({{"kind", "auth_response"},
                        {"request_id", tid + ":auth"},
                        {"token", token.to_value()}}),
            900);
    REQUIRE(f.ctx.sent.back().second.find("kind")->as_string() == "claims_request");

    // a claim set whose payload was tampered after signing
    Claim claim;
    claim.claim_id = "c1";
    claim.subject_id = "alice";
    claim.attributes = {{"min", Value(1)}, {"max", Value(2)}};
    claim.text = "t";
    claim.provenance.push_back({"ds", "dp1", "tx-range", "v1", 1});
    claim.issued_at = 0;
    claim.expires_at = 10;
    auto payload = must_canonicalize(Value::map({
        {"claims", Value::list({claim.to_value()})},
        {"issuer_id", "cp1"},
        {"request_id", tid + ":claims"},
        {"subject_id", "alice"},
    }));
    auto env = sign_envelope(cp_key, PayloadType::claim_set, payload, 1000);
    env.payload = must_canonicalize(Value::map({
        {"claims", Value::list({claim.to_value()})},
        {"issuer_id", "cp1"},
        {"request_id", tid + ":claims"},
        {"subject_id", "mallory"},
    }));
    deliver("cp1",
            Value::map({{"claimset", env.to_value()},
                        {"failures", Value::list({})},
                        {"kind", "claims_response"},
                        {"request_id", tid + ":claims"}}),
            901);

    TransferRecord* record = node.transfer(tid);
    CHECK(record->state == TransferState::initiated);  // unchanged
    CHECK(record->last_error->code == ErrorCode::signature_invalid);
    CHECK(record->claimsets.empty());
}

TEST_CASE("policy matrix lookup") {
    Fixture f;
    VaspOptions o = f.options();
    o.policy["KP"] = {PolicyMode::blocked, ""};
    o.policy["DE"] = {PolicyMode::require_extra_claim, "residency"};
    VaspNode node(f.vasp_a_key, o, f.ctx.dir.key_lookup());
    CHECK(node.policy_for("KP").mode == PolicyMode::blocked);
    CHECK(node.policy_for("DE").mode == PolicyMode::require_extra_claim);
    CHECK(node.policy_for("DE").required_algo == "residency");
    CHECK(node.policy_for("FR").mode == PolicyMode::allowed);  // default
}
