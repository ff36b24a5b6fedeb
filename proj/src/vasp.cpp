#include "cen/vasp.hpp"

#include <algorithm>
#include <array>

#include "cen/did_resolver.hpp"

namespace cen {

namespace {

constexpr std::array<std::pair<LocatorKind, std::string_view>, 4> kLocatorNames{{
    {LocatorKind::geographic_address, "geographic_address"},
    {LocatorKind::national_identity_number, "national_identity_number"},
    {LocatorKind::customer_identification_number, "customer_identification_number"},
    {LocatorKind::date_and_place_of_birth, "date_and_place_of_birth"},
}};

constexpr std::array<std::pair<TransferState, std::string_view>, 6> kStateNames{{
    {TransferState::initiated, "Initiated"},
    {TransferState::claims_gathered, "ClaimsGathered"},
    {TransferState::counterparty_verified, "CounterpartyVerified"},
    {TransferState::info_exchanged, "InfoExchanged"},
    {TransferState::finalized, "Finalized"},
    {TransferState::rejected, "Rejected"},
}};

}  // namespace

std::string_view locator_kind_name(LocatorKind k) {
    for (const auto& [kind, name] : kLocatorNames) {
        if (kind == k) return name;
    }
    return "unknown";
}

std::optional<LocatorKind> locator_kind_from_name(std::string_view name) {
    for (const auto& [kind, n] : kLocatorNames) {
        if (n == name) return kind;
    }
    return std::nullopt;
}

std::string_view transfer_state_name(TransferState s) {
    for (const auto& [state, name] : kStateNames) {
        if (state == s) return name;
    }
    return "unknown";
}

std::string_view policy_mode_name(PolicyMode m) {
    switch (m) {
        case PolicyMode::allowed: return "allowed";
        case PolicyMode::blocked: return "blocked";
        case PolicyMode::require_extra_claim: return "require_extra_claim";
    }
    return "unknown";
}

std::optional<PolicyMode> policy_mode_from_name(std::string_view name) {
    if (name == "allowed") return PolicyMode::allowed;
    if (name == "blocked") return PolicyMode::blocked;
    if (name == "require_extra_claim") return PolicyMode::require_extra_claim;
    return std::nullopt;
}

Value TravelRulePacket::to_value() const {
    return Value::map({
        {"beneficiary_account", beneficiary_account},
        {"beneficiary_name", beneficiary_name},
        {"originator_account", originator_account},
        {"originator_locator", Value::map({
                                   {"kind", locator_kind_name(locator_kind)},
                                   {"value", locator_value},
                               })},
        {"originator_name", originator_name},
        {"transfer_id", transfer_id},
    });
}

Result<TravelRulePacket> TravelRulePacket::from_value(const Value& record) {
    auto incomplete = [](std::string_view group) {
        return make_error(ErrorCode::incomplete_packet,
                          "missing field group '" + std::string(group) + "'");
    };
    if (!record.is_map()) return incomplete("packet");
    TravelRulePacket p;
    auto text_field = [&](const char* key) -> std::optional<std::string> {
        const Value* v = record.find(key);
        if (v == nullptr || !v->is_string() || v->as_string().empty()) return std::nullopt;
        return v->as_string();
    };
    if (auto id = text_field("transfer_id")) p.transfer_id = *id;

    auto name = text_field("originator_name");
    if (!name) return incomplete("originator_name");
    p.originator_name = *name;

    auto account = text_field("originator_account");
    if (!account) return incomplete("originator_account");
    p.originator_account = *account;

    const Value* locator = record.find("originator_locator");
    if (locator == nullptr || !locator->is_map()) return incomplete("originator_locator");
    {
        const auto& m = locator->as_map();
        if (m.size() != 2 || !m.contains("kind") || !m.contains("value")) {
            return make_error(ErrorCode::incomplete_packet,
                              "originator_locator must hold exactly one variant");
        }
        const Value& kind = m.at("kind");
        const Value& value = m.at("value");
        if (!kind.is_string() || !value.is_string() || value.as_string().empty()) {
            return incomplete("originator_locator");
        }
        auto parsed = locator_kind_from_name(kind.as_string());
        if (!parsed) {
            return make_error(ErrorCode::incomplete_packet,
                              "unknown locator variant '" + kind.as_string() + "'");
        }
        p.locator_kind = *parsed;
        p.locator_value = value.as_string();
    }

    auto beneficiary = text_field("beneficiary_name");
    if (!beneficiary) return incomplete("beneficiary_name");
    p.beneficiary_name = *beneficiary;

    auto beneficiary_acct = text_field("beneficiary_account");
    if (!beneficiary_acct) return incomplete("beneficiary_account");
    p.beneficiary_account = *beneficiary_acct;

    return p;
}

Value NonRepudiationReceipt::to_value() const {
    return Value::map({
        {"delivered_hash", delivered_hash},
        {"receiver_countersignature", receiver_countersignature.to_value()},
        {"sender_signature", sender_signature.to_value()},
        {"transfer_id", transfer_id},
    });
}

Result<NonRepudiationReceipt> NonRepudiationReceipt::from_value(const Value& record) {
    NonRepudiationReceipt r;
    CEN_TRY(tid, get_string(record, "transfer_id"));
    r.transfer_id = tid;
    CEN_TRY(hash, get_bytes(record, "delivered_hash"));
    r.delivered_hash = hash;
    CEN_TRY(sender_map, get_map(record, "sender_signature"));
    CEN_TRY(sender, SignedEnvelope::from_value(Value(*sender_map)));
    r.sender_signature = sender;
    CEN_TRY(counter_map, get_map(record, "receiver_countersignature"));
    CEN_TRY(counter, SignedEnvelope::from_value(Value(*counter_map)));
    r.receiver_countersignature = counter;
    return r;
}

SignedEnvelope make_sender_signature(const KeyPair& sender, std::string_view transfer_id,
                                     const Bytes& delivered_hash, std::int64_t now_ms) {
    auto payload = must_canonicalize(Value::map({
        {"delivered_hash", delivered_hash},
        {"role", "sender_signature"},
        {"transfer_id", std::string(transfer_id)},
    }));
    return sign_envelope(sender, PayloadType::receipt, std::move(payload), now_ms);
}

SignedEnvelope make_countersignature(const KeyPair& receiver, std::string_view transfer_id,
                                     const SignedEnvelope& sender_signature, std::int64_t now_ms) {
    auto payload = must_canonicalize(Value::map({
        {"role", "countersignature"},
        {"sender_sig_hash", envelope_hash(sender_signature)},
        {"transfer_id", std::string(transfer_id)},
    }));
    return sign_envelope(receiver, PayloadType::receipt, std::move(payload), now_ms);
}

Result<void> verify_receipt(const NonRepudiationReceipt& receipt, const Bytes& sender_key,
                            const Bytes& receiver_key) {
    auto invalid = [](std::string detail) {
        return make_error(ErrorCode::receipt_invalid, std::move(detail));
    };
    if (!envelope_ok(receipt.sender_signature, sender_key)) {
        return invalid("sender signature does not verify");
    }
    auto sender_payload = receipt.sender_signature.payload_value();
    if (!sender_payload.ok()) return invalid("sender signature payload malformed");
    auto delivered = get_bytes(sender_payload.value(), "delivered_hash");
    auto sender_tid = get_string(sender_payload.value(), "transfer_id");
    if (!delivered.ok() || !sender_tid.ok() || delivered.value() != receipt.delivered_hash ||
        sender_tid.value() != receipt.transfer_id) {
        return invalid("sender signature does not cover this delivery");
    }
    if (!envelope_ok(receipt.receiver_countersignature, receiver_key)) {
        return invalid("countersignature does not verify");
    }
    auto counter_payload = receipt.receiver_countersignature.payload_value();
    if (!counter_payload.ok()) return invalid("countersignature payload malformed");
    auto sig_hash = get_bytes(counter_payload.value(), "sender_sig_hash");
    auto counter_tid = get_string(counter_payload.value(), "transfer_id");
    if (!sig_hash.ok() || !counter_tid.ok() ||
        sig_hash.value() != envelope_hash(receipt.sender_signature) ||
        counter_tid.value() != receipt.transfer_id) {
        return invalid("countersignature does not cover the sender signature");
    }
    return ok();
}

Value TransferRecord::export_record() const {
    Value v = Value::map({
        {"amount", amount},
        {"beneficiary", beneficiary},
        {"beneficiary_vasp", beneficiary_vasp},
        {"originating_vasp", originating_vasp},
        {"originator", originator},
        {"role", role == TransferRole::originating ? "originating" : "beneficiary"},
        {"state", transfer_state_name(state)},
        {"transfer_id", transfer_id},
    });
    if (reject_reason) {
        v.set("reason", Value::map({{"code", std::string(error_code_name(reject_reason->code))},
                                    {"detail", reject_reason->detail}}));
    }
    if (last_error) {
        v.set("last_error", Value::map({{"code", std::string(error_code_name(last_error->code))},
                                        {"detail", last_error->detail}}));
    }
    if (packet_sent) v.set("packet_sent_hash", envelope_hash(*packet_sent));
    if (packet_received) v.set("packet_received_hash", envelope_hash(*packet_received));
    auto receipt_value = [](const NonRepudiationReceipt& r) {
        return Value::map({
            {"countersignature_hash", envelope_hash(r.receiver_countersignature)},
            {"delivered_hash", r.delivered_hash},
            {"sender_signature_hash", envelope_hash(r.sender_signature)},
        });
    };
    if (receipt_for_sent) v.set("receipt_for_sent", receipt_value(*receipt_for_sent));
    if (receipt_issued) v.set("receipt_issued", receipt_value(*receipt_issued));
    v.set("claimsets_gathered", static_cast<std::int64_t>(claimsets.size()));
    v.set("claimsets_received", static_cast<std::int64_t>(peer_claimsets.size()));
    return v;
}

namespace {

KeyLookup with_own_key(KeyLookup base, std::string id, Bytes public_key) {
    return [base = std::move(base), id = std::move(id),
            public_key = std::move(public_key)](std::string_view query) -> std::optional<Bytes> {
        if (query == id) return public_key;
        return base ? base(query) : std::nullopt;
    };
}

}  // namespace

VaspNode::VaspNode(KeyPair key, VaspOptions options, KeyLookup keys)
    : Node(std::move(key)),
      options_(std::move(options)),
      keys_(with_own_key(std::move(keys), node_id(), this->keys().public_key)),
      log_(keys_) {}

void VaspNode::add_customer(CustomerAccount customer, std::int64_t opening_balance) {
    accounts_.insert_or_assign(customer.account_id, opening_balance);
    auto subject = customer.subject_id;
    customers_.insert_or_assign(std::move(subject), std::move(customer));
}

const CustomerAccount* VaspNode::customer(std::string_view subject_id) const {
    auto it = customers_.find(std::string(subject_id));
    return it == customers_.end() ? nullptr : &it->second;
}

Result<void> VaspNode::attach_ownership(std::string_view subject_id,
                                        KeyOwnershipAttestation attestation) {
    auto it = customers_.find(std::string(subject_id));
    if (it == customers_.end()) {
        return make_error(ErrorCode::unknown_customer, std::string(subject_id));
    }
    it->second.ownership = std::move(attestation);
    return ok();
}

Result<void> VaspNode::attach_custody(std::string_view subject_id, CustodyAttestation attestation) {
    auto it = customers_.find(std::string(subject_id));
    if (it == customers_.end()) {
        return make_error(ErrorCode::unknown_customer, std::string(subject_id));
    }
    it->second.custody = std::move(attestation);
    return ok();
}

Result<void> VaspNode::credit(const std::string& account_id, std::int64_t amount) {
    auto it = accounts_.find(account_id);
    if (it == accounts_.end()) {
        return make_error(ErrorCode::not_found, "no account '" + account_id + "'");
    }
    it->second += amount;
    return ok();
}

Result<void> VaspNode::debit(const std::string& account_id, std::int64_t amount) {
    auto it = accounts_.find(account_id);
    if (it == accounts_.end()) {
        return make_error(ErrorCode::not_found, "no account '" + account_id + "'");
    }
    it->second -= amount;
    return ok();
}

TransferRecord* VaspNode::transfer(std::string_view transfer_id) {
    auto it = transfers_.find(std::string(transfer_id));
    return it == transfers_.end() ? nullptr : &it->second;
}

const PolicyEntry& VaspNode::policy_for(std::string_view jurisdiction) const {
    static const PolicyEntry kAllowed{PolicyMode::allowed, ""};
    static const PolicyEntry kBlocked{PolicyMode::blocked, ""};
    auto it = options_.policy.find(std::string(jurisdiction));
    if (it != options_.policy.end()) return it->second;
    return options_.policy_default == PolicyMode::allowed ? kAllowed : kBlocked;
}

Result<std::string> VaspNode::initiate_transfer(const std::string& originator,
                                                const std::string& beneficiary,
                                                const std::string& beneficiary_name,
                                                const std::string& beneficiary_account,
                                                const std::string& beneficiary_vasp,
                                                std::int64_t amount, NodeContext& ctx) {
    const CustomerAccount* cust = customer(originator);
    if (cust == nullptr) {
        return make_error(ErrorCode::unknown_customer,
                          "'" + originator + "' is not onboarded at " + node_id());
    }
    if (amount <= 0) {
        return make_error(ErrorCode::invalid_argument, "amount must be positive");
    }
    const DirectoryEntry* peer = ctx.directory().find(beneficiary_vasp);
    if (peer == nullptr || peer->kind != "vasp") {
        return make_error(ErrorCode::invalid_argument,
                          "'" + beneficiary_vasp + "' is not a known VASP");
    }
    TransferRecord record;
    record.transfer_id = node_id() + "-t" + std::to_string(transfer_counter_++);
    record.role = TransferRole::originating;
    record.originator = originator;
    record.beneficiary = beneficiary;
    record.beneficiary_name = beneficiary_name;
    record.beneficiary_account = beneficiary_account;
    record.originating_vasp = node_id();
    record.beneficiary_vasp = beneficiary_vasp;
    record.amount = amount;
    record.state = TransferState::initiated;
    auto [it, inserted] = transfers_.emplace(record.transfer_id, std::move(record));
    (void)inserted;
    start_gather(it->second, ctx);
    return it->first;
}

std::string VaspNode::peer_vasp(const TransferRecord& record) const {
    return record.role == TransferRole::originating ? record.beneficiary_vasp
                                                    : record.originating_vasp;
}

void VaspNode::start_gather(TransferRecord& record, NodeContext& ctx) {
    const std::string own_subject =
        record.role == TransferRole::originating ? record.originator : record.beneficiary;
    const CustomerAccount* cust = customer(own_subject);
    if (cust == nullptr) {
        gather_failed(record, make_error(ErrorCode::unknown_customer, own_subject), ctx);
        return;
    }
    if (!cust->claims_provider.empty()) {
        request_auth(record, ctx);
        return;
    }
    if (!cust->did.empty() && !options_.resolver_node.empty()) {
        record.stage = TransferRecord::Stage::resolving;
        record.stage_deadline = ctx.now() + options_.request_timeout_ms;
        ctx.send(options_.resolver_node,
                 Value::map({
                     {"did", cust->did},
                     {"kind", "resolve_request"},
                     {"request_id", record.transfer_id + ":resolve"},
                 }));
        ctx.set_timer(options_.request_timeout_ms, "gather:" + record.transfer_id);
        return;
    }
    gather_failed(record,
                  make_error(ErrorCode::claims_unavailable,
                             "no claims provider known for '" + own_subject + "'"),
                  ctx);
}

void VaspNode::request_auth(TransferRecord& record, NodeContext& ctx) {
    const std::string own_subject =
        record.role == TransferRole::originating ? record.originator : record.beneficiary;
    const CustomerAccount* cust = customer(own_subject);
    auto credential = options_.credentials.find(cust->claims_provider);
    if (credential == options_.credentials.end()) {
        gather_failed(record,
                      make_error(ErrorCode::claims_unavailable,
                                 "no credential for claims provider '" + cust->claims_provider +
                                     "'"),
                      ctx);
        return;
    }
    record.stage = TransferRecord::Stage::authenticating;
    record.stage_deadline = ctx.now() + options_.request_timeout_ms;
    ctx.send(cust->claims_provider,
             Value::map({
                 {"credential", credential->second},
                 {"kind", "auth_request"},
                 {"request_id", record.transfer_id + ":auth"},
                 {"requested_algos", Value::list_of(options_.gather_algos)},
                 {"vasp_id", node_id()},
             }));
    ctx.set_timer(options_.request_timeout_ms, "gather:" + record.transfer_id);
}

void VaspNode::gather_failed(TransferRecord& record, Error error, NodeContext& ctx) {
    record.stage = TransferRecord::Stage::idle;
    record.last_error = error;
    ctx.note(node_id() + " " + record.transfer_id + " gather failed: " + error.to_string());
    if (record.role == TransferRole::beneficiary) {
        // The counterparty is waiting on us; the exchange cannot proceed.
        reject_transfer(record, std::move(error), /*notify_peer=*/true, ctx);
    }
}

void VaspNode::reject_transfer(TransferRecord& record, Error error, bool notify_peer,
                               NodeContext& ctx) {
    if (record.state == TransferState::rejected || record.state == TransferState::finalized) {
        return;
    }
    record.state = TransferState::rejected;
    record.reject_reason = error;
    if (notify_peer) {
        ctx.send(peer_vasp(record), Value::map({
                                        {"detail", error.detail},
                                        {"error", std::string(error_code_name(error.code))},
                                        {"kind", "exchange_reject"},
                                        {"transfer_id", record.transfer_id},
                                    }));
    }
}

Result<void> VaspNode::verify_counterparty(TransferRecord& record, std::int64_t now_ms) {
    if (record.state != TransferState::claims_gathered) {
        return make_error(ErrorCode::invalid_argument, "transfer is not in ClaimsGathered");
    }
    const std::string own_subject =
        record.role == TransferRole::originating ? record.originator : record.beneficiary;
    const CustomerAccount* cust = customer(own_subject);
    if (cust == nullptr) {
        return make_error(ErrorCode::unknown_customer, own_subject);
    }
    Result<void> checked = make_error(
        ErrorCode::ownership_unattested,
        "no key attestation on file for '" + own_subject + "' (possession proof is not ownership)");
    if (cust->ownership) {
        checked = check_ownership(*cust->ownership, options_.trusted_roots, now_ms);
    } else if (cust->custody) {
        checked = check_custody(*cust->custody, options_.trusted_roots, now_ms);
        if (checked.ok() && cust->custody->vasp_id != node_id()) {
            checked = make_error(ErrorCode::ownership_unattested,
                                 "custody attestation names a different custodian");
        }
    }
    if (!checked.ok()) {
        Error error = checked.error();
        if (error.code == ErrorCode::bad_signature) {
            error.code = ErrorCode::ownership_unattested;
        }
        record.last_error = error;
        return error;
    }
    record.state = TransferState::counterparty_verified;
    return ok();
}

void VaspNode::after_counterparty_verified(TransferRecord& record, NodeContext& ctx) {
    // Retained key-provenance evidence goes into the log at attach time.
    const std::string own_subject =
        record.role == TransferRole::originating ? record.originator : record.beneficiary;
    const CustomerAccount* cust = customer(own_subject);
    const auto& chain = cust->ownership ? cust->ownership->chain : cust->custody->chain;
    for (const auto& link : chain) {
        auto appended = log_.append(link, ctx.now());
        if (!appended.ok()) {
            ctx.note(node_id() + " failed to log attestation link: " +
                     appended.error().to_string());
        }
    }
    if (record.role == TransferRole::originating) {
        start_exchange(record, ctx);
    } else {
        ctx.send(record.originating_vasp, Value::map({
                                              {"kind", "exchange_ready"},
                                              {"transfer_id", record.transfer_id},
                                          }));
    }
}

void VaspNode::start_exchange(TransferRecord& record, NodeContext& ctx) {
    const DirectoryEntry* peer = ctx.directory().find(record.beneficiary_vasp);
    const PolicyEntry& policy = policy_for(peer->jurisdiction);
    if (policy.mode == PolicyMode::blocked) {
        reject_transfer(record,
                        make_error(ErrorCode::policy_blocked,
                                   "transfers to jurisdiction '" + peer->jurisdiction +
                                       "' are blocked"),
                        /*notify_peer=*/false, ctx);
        return;
    }
    ctx.send(record.beneficiary_vasp,
             Value::map({
                 {"amount", record.amount},
                 {"beneficiary", record.beneficiary},
                 {"beneficiary_account", record.beneficiary_account},
                 {"beneficiary_name", record.beneficiary_name},
                 {"kind", "transfer_announce"},
                 {"originator", record.originator},
                 {"transfer_id", record.transfer_id},
             }));
}

TravelRulePacket VaspNode::build_packet(const TransferRecord& record) const {
    TravelRulePacket packet;
    packet.transfer_id = record.transfer_id;
    if (record.role == TransferRole::originating) {
        const CustomerAccount* cust = customer(record.originator);
        packet.originator_name = cust->name;
        packet.originator_account = cust->account_id;
        packet.locator_kind = cust->locator_kind;
        packet.locator_value = cust->locator_value;
        packet.beneficiary_name = record.beneficiary_name;
        packet.beneficiary_account = record.beneficiary_account;
    } else {
        // Echo the originator fields the counterparty attested; fill the
        // beneficiary fields from our own customer records.
        auto received = TravelRulePacket::from_value(
                            record.packet_received->payload_value().value())
                            .value();
        packet.originator_name = received.originator_name;
        packet.originator_account = received.originator_account;
        packet.locator_kind = received.locator_kind;
        packet.locator_value = received.locator_value;
        const CustomerAccount* cust = customer(record.beneficiary);
        packet.beneficiary_name = cust->name;
        packet.beneficiary_account = cust->account_id;
    }
    return packet;
}

void VaspNode::send_packet_delivery(TransferRecord& record, NodeContext& ctx) {
    TravelRulePacket packet = build_packet(record);
    auto packet_env = sign_envelope(keys(), PayloadType::travel_rule_packet,
                                    must_canonicalize(packet.to_value()), ctx.now());
    auto sender_sig =
        make_sender_signature(keys(), record.transfer_id, envelope_hash(packet_env), ctx.now());
    Value::List claimset_values;
    for (const auto& cs : record.claimsets) claimset_values.push_back(cs.to_value());

    auto logged_packet = log_.append(packet_env, ctx.now());
    auto logged_sig = log_.append(sender_sig, ctx.now());
    if (!logged_packet.ok() || !logged_sig.ok()) {
        ctx.note(node_id() + " failed to log outbound packet for " + record.transfer_id);
    }
    record.packet_sent = packet_env;
    record.sender_sig_sent = sender_sig;
    record.receipt_deadline = ctx.now() + options_.receipt_timeout_ms;
    ctx.send(peer_vasp(record), Value::map({
                                    {"claimsets", Value(std::move(claimset_values))},
                                    {"kind", "packet_delivery"},
                                    {"packet", packet_env.to_value()},
                                    {"sender_signature", sender_sig.to_value()},
                                    {"transfer_id", record.transfer_id},
                                }));
    ctx.set_timer(options_.receipt_timeout_ms, "receipt:" + record.transfer_id);
}

Result<void> VaspNode::check_delivered_claimsets(const TransferRecord& record,
                                                 const std::vector<ClaimSet>& delivered,
                                                 std::string_view expected_subject,
                                                 std::string_view counterpart_jurisdiction,
                                                 NodeContext& ctx) const {
    (void)record;
    if (delivered.empty()) {
        return make_error(ErrorCode::claims_unavailable, "delivery carries no claim sets");
    }
    bool extra_claim_found = false;
    const PolicyEntry& policy = policy_for(counterpart_jurisdiction);
    for (const auto& cs : delivered) {
        const DirectoryEntry* issuer = ctx.directory().find(cs.issuer_id);
        if (issuer == nullptr || issuer->kind != "claims_provider") {
            return make_error(ErrorCode::signature_invalid,
                              "claim set issuer '" + cs.issuer_id + "' is not a claims provider");
        }
        if (!envelope_ok(cs.envelope, issuer->public_key)) {
            return make_error(ErrorCode::signature_invalid, "claim set signature does not verify");
        }
        if (cs.subject_id != expected_subject) {
            return make_error(ErrorCode::signature_invalid,
                              "claim set is about '" + cs.subject_id + "', expected '" +
                                  std::string(expected_subject) + "'");
        }
        for (const auto& claim : cs.claims) {
            for (const auto& prov : claim.provenance) {
                if (policy.mode == PolicyMode::require_extra_claim &&
                    prov.algo_id == policy.required_algo) {
                    extra_claim_found = true;
                }
            }
        }
    }
    if (policy.mode == PolicyMode::require_extra_claim && !extra_claim_found) {
        return make_error(ErrorCode::policy_blocked,
                          "jurisdiction '" + std::string(counterpart_jurisdiction) +
                              "' requires a '" + policy.required_algo + "' claim");
    }
    return ok();
}

void VaspNode::maybe_info_exchanged(TransferRecord& record, NodeContext& ctx) {
    if (record.state != TransferState::counterparty_verified) return;
    if (!record.packet_sent || !record.receipt_for_sent || !record.packet_received ||
        !record.receipt_issued) {
        return;
    }
    record.state = TransferState::info_exchanged;
    if (record.role == TransferRole::originating || record.finalize_notice_seen) {
        auto finalized = finalize(record, ctx);
        if (!finalized.ok()) {
            ctx.note(node_id() + " finalize failed for " + record.transfer_id + ": " +
                     finalized.error().to_string());
        }
    }
}

Result<void> VaspNode::finalize(TransferRecord& record, NodeContext& ctx) {
    if (record.state == TransferState::finalized) return ok();  // exactly-once
    if (record.state != TransferState::info_exchanged) {
        return make_error(ErrorCode::invalid_argument, "transfer is not in InfoExchanged");
    }
    const DirectoryEntry* peer = ctx.directory().find(peer_vasp(record));
    const Bytes& own_key = keys().public_key;
    auto checked_ours = verify_receipt(*record.receipt_for_sent, own_key, peer->public_key);
    auto checked_theirs = verify_receipt(*record.receipt_issued, peer->public_key, own_key);
    if (!checked_ours.ok() || !checked_theirs.ok()) {
        Error error = make_error(ErrorCode::receipt_invalid,
                                 (!checked_ours.ok() ? checked_ours : checked_theirs)
                                     .error()
                                     .detail);
        record.last_error = error;
        return error;
    }
    if (record.role == TransferRole::originating) {
        const CustomerAccount* cust = customer(record.originator);
        CEN_CHECK_OK(ctx.settlement().settle(record.transfer_id, node_id(), cust->account_id,
                                             record.beneficiary_vasp, record.beneficiary_account,
                                             record.amount));
        record.state = TransferState::finalized;
        ctx.send(record.beneficiary_vasp, Value::map({
                                              {"kind", "finalize_notice"},
                                              {"transfer_id", record.transfer_id},
                                          }));
    } else {
        record.state = TransferState::finalized;
    }
    return ok();
}

void VaspNode::on_timer(std::string_view key, NodeContext& ctx) {
    auto sep = key.find(':');
    if (sep == std::string_view::npos) return;
    std::string_view what = key.substr(0, sep);
    TransferRecord* record = transfer(key.substr(sep + 1));
    if (record == nullptr) return;
    if (what == "gather") {
        if (record->stage != TransferRecord::Stage::idle && ctx.now() >= record->stage_deadline) {
            gather_failed(*record,
                          make_error(ErrorCode::claims_unavailable, "claims pipeline timed out"),
                          ctx);
        }
    } else if (what == "receipt") {
        if (record->state == TransferState::counterparty_verified && record->packet_sent &&
            !record->receipt_for_sent && ctx.now() >= record->receipt_deadline) {
            reject_transfer(*record,
                            make_error(ErrorCode::receipt_missing,
                                       "counterparty failed to countersign within " +
                                           std::to_string(options_.receipt_timeout_ms) + "ms"),
                            /*notify_peer=*/false, ctx);
        }
    }
}

void VaspNode::on_message(const Value& body, const BusMessage& message, NodeContext& ctx) {
    auto kind = get_string(body, "kind");
    if (!kind.ok()) return;
    const std::string& k = kind.value();
    if (k == "transfer_request") {
        handle_transfer_request(body, message, ctx);
    } else if (k == "onboard") {
        handle_onboard(body, message, ctx);
    } else if (k == "resolve_response") {
        handle_resolve_response(body, ctx);
    } else if (k == "auth_response") {
        handle_auth_response(body, message, ctx);
    } else if (k == "claims_response") {
        handle_claims_response(body, message, ctx);
    } else if (k == "transfer_announce") {
        handle_transfer_announce(body, message, ctx);
    } else if (k == "exchange_ready") {
        handle_exchange_ready(body, message, ctx);
    } else if (k == "packet_delivery") {
        handle_packet_delivery(body, message, ctx);
    } else if (k == "exchange_receipt") {
        handle_exchange_receipt(body, message, ctx);
    } else if (k == "exchange_reject") {
        handle_exchange_reject(body, ctx);
    } else if (k == "finalize_notice") {
        handle_finalize_notice(body, ctx);
    } else {
        ctx.note(node_id() + " ignoring message kind '" + k + "'");
    }
}

void VaspNode::handle_transfer_request(const Value& body, const BusMessage& message,
                                       NodeContext& ctx) {
    auto originator = get_string(body, "originator");
    auto beneficiary = get_string(body, "beneficiary");
    auto beneficiary_name = get_string(body, "beneficiary_name");
    auto beneficiary_account = get_string(body, "beneficiary_account");
    auto beneficiary_vasp = get_string(body, "beneficiary_vasp");
    auto amount = get_int(body, "amount");
    if (!originator.ok() || !beneficiary.ok() || !beneficiary_name.ok() ||
        !beneficiary_account.ok() || !beneficiary_vasp.ok() || !amount.ok()) {
        ctx.note(node_id() + " malformed transfer_request");
        return;
    }
    if (message.from_node != originator.value()) {
        ctx.note(node_id() + " transfer_request not signed by the originator");
        return;
    }
    auto started = initiate_transfer(originator.value(), beneficiary.value(),
                                     beneficiary_name.value(), beneficiary_account.value(),
                                     beneficiary_vasp.value(), amount.value(), ctx);
    if (!started.ok()) {
        ctx.note(node_id() + " transfer_request refused: " + started.error().to_string());
    }
}

void VaspNode::handle_onboard(const Value& body, const BusMessage& message, NodeContext& ctx) {
    auto subject = get_string(body, "subject");
    if (!subject.ok() || message.from_node != subject.value()) {
        ctx.note(node_id() + " malformed onboard message");
        return;
    }
    if (customer(subject.value()) == nullptr) {
        ctx.note(node_id() + " onboard for unknown customer '" + subject.value() + "'");
        return;
    }
    if (const Value* ownership = body.find("ownership")) {
        auto attestation = KeyOwnershipAttestation::from_value(*ownership);
        if (attestation.ok()) {
            attach_ownership(subject.value(), std::move(attestation).take()).value();
        } else {
            ctx.note(node_id() + " onboard attestation malformed: " +
                     attestation.error().to_string());
        }
    }
    if (const Value* custody = body.find("custody")) {
        auto attestation = CustodyAttestation::from_value(*custody);
        if (attestation.ok()) {
            attach_custody(subject.value(), std::move(attestation).take()).value();
        } else {
            ctx.note(node_id() + " onboard custody record malformed: " +
                     attestation.error().to_string());
        }
    }
}

namespace {

// request ids look like "<transfer_id>:<stage>"
std::string transfer_of(const std::string& request_id) {
    auto sep = request_id.rfind(':');
    return sep == std::string::npos ? request_id : request_id.substr(0, sep);
}

}  // namespace

void VaspNode::handle_resolve_response(const Value& body, NodeContext& ctx) {
    auto request_id = get_string(body, "request_id");
    if (!request_id.ok()) return;
    TransferRecord* record = transfer(transfer_of(request_id.value()));
    if (record == nullptr || record->stage != TransferRecord::Stage::resolving) return;
    if (const Value* error = body.find("error")) {
        gather_failed(*record,
                      make_error(ErrorCode::claims_unavailable,
                                 "resolver: " + error->as_string()),
                      ctx);
        return;
    }
    const Value* env_record = body.find("record");
    if (env_record == nullptr) return;
    auto env = SignedEnvelope::from_value(*env_record);
    if (!env.ok()) {
        gather_failed(*record, make_error(ErrorCode::claims_unavailable, "bad endpoint record"),
                      ctx);
        return;
    }
    auto endpoint = EndpointRecord::from_envelope(std::move(env).take());
    const std::string own_subject =
        record->role == TransferRole::originating ? record->originator : record->beneficiary;
    auto subject_key = keys_(own_subject);
    if (!endpoint.ok() || !subject_key ||
        !envelope_ok(endpoint.value().envelope, *subject_key)) {
        gather_failed(*record,
                      make_error(ErrorCode::signature_invalid,
                                 "endpoint record not signed by the subject"),
                      ctx);
        return;
    }
    customers_.at(own_subject).claims_provider = endpoint.value().claims_provider_id;
    request_auth(*record, ctx);
}

void VaspNode::handle_auth_response(const Value& body, const BusMessage& message,
                                    NodeContext& ctx) {
    auto request_id = get_string(body, "request_id");
    if (!request_id.ok()) return;
    TransferRecord* record = transfer(transfer_of(request_id.value()));
    if (record == nullptr || record->stage != TransferRecord::Stage::authenticating) return;
    if (const Value* error = body.find("error")) {
        std::string detail = "authentication failed: " + error->as_string();
        if (const Value* d = body.find("detail")) detail += " (" + d->as_string() + ")";
        gather_failed(*record, make_error(ErrorCode::claims_unavailable, detail), ctx);
        return;
    }
    const Value* token_record = body.find("token");
    if (token_record == nullptr) return;
    auto env = SignedEnvelope::from_value(*token_record);
    if (!env.ok()) {
        gather_failed(*record, make_error(ErrorCode::claims_unavailable, "malformed token"), ctx);
        return;
    }
    auto token = AccessToken::from_envelope(std::move(env).take());
    if (!token.ok()) {
        gather_failed(*record, make_error(ErrorCode::claims_unavailable, "malformed token"), ctx);
        return;
    }
    record->token = std::move(token).take();
    const std::string own_subject =
        record->role == TransferRole::originating ? record->originator : record->beneficiary;
    ClaimsRequest request;
    request.request_id = record->transfer_id + ":claims";
    request.vasp_id = node_id();
    request.subject_id = own_subject;
    request.algo_ids = options_.gather_algos;
    request.token = *record->token;
    record->stage = TransferRecord::Stage::requesting_claims;
    record->stage_deadline = ctx.now() + options_.request_timeout_ms;
    ctx.send(message.from_node, Value::map({
                                    {"kind", "claims_request"},
                                    {"request", request.to_value()},
                                }));
    ctx.set_timer(options_.request_timeout_ms, "gather:" + record->transfer_id);
}

void VaspNode::handle_claims_response(const Value& body, const BusMessage& message,
                                      NodeContext& ctx) {
    auto request_id = get_string(body, "request_id");
    if (!request_id.ok()) return;
    TransferRecord* record = transfer(transfer_of(request_id.value()));
    if (record == nullptr || record->stage != TransferRecord::Stage::requesting_claims) return;
    if (const Value* error = body.find("error")) {
        std::string detail = "claims provider: " + error->as_string();
        if (const Value* d = body.find("detail")) detail += " (" + d->as_string() + ")";
        gather_failed(*record, make_error(ErrorCode::claims_unavailable, detail), ctx);
        return;
    }
    const Value* claimset_record = body.find("claimset");
    if (claimset_record == nullptr) {
        gather_failed(*record, make_error(ErrorCode::claims_unavailable, "response without claims"),
                      ctx);
        return;
    }
    auto env = SignedEnvelope::from_value(*claimset_record);
    if (!env.ok()) {
        gather_failed(*record, make_error(ErrorCode::signature_invalid, "malformed claim set"),
                      ctx);
        return;
    }
    const DirectoryEntry* issuer = ctx.directory().find(message.from_node);
    if (issuer == nullptr || !envelope_ok(env.value(), issuer->public_key)) {
        gather_failed(*record,
                      make_error(ErrorCode::signature_invalid,
                                 "claim set signature does not verify"),
                      ctx);
        return;
    }
    auto claimset = ClaimSet::from_envelope(std::move(env).take());
    const std::string own_subject =
        record->role == TransferRole::originating ? record->originator : record->beneficiary;
    if (!claimset.ok() || claimset.value().subject_id != own_subject) {
        gather_failed(*record,
                      make_error(ErrorCode::signature_invalid, "claim set subject mismatch"),
                      ctx);
        return;
    }
    auto logged = log_.append(claimset.value().envelope, ctx.now());
    if (!logged.ok()) {
        gather_failed(*record, make_error(ErrorCode::invalid_envelope, logged.error().detail),
                      ctx);
        return;
    }
    record->claimsets.push_back(std::move(claimset).take());
    record->stage = TransferRecord::Stage::idle;
    record->state = TransferState::claims_gathered;

    auto verified = verify_counterparty(*record, ctx.now());
    if (!verified.ok()) {
        ctx.note(node_id() + " " + record->transfer_id + " counterparty verification failed: " +
                 verified.error().to_string());
        if (record->role == TransferRole::beneficiary) {
            reject_transfer(*record, verified.error(), /*notify_peer=*/true, ctx);
        }
        return;
    }
    after_counterparty_verified(*record, ctx);
}

void VaspNode::handle_transfer_announce(const Value& body, const BusMessage& message,
                                        NodeContext& ctx) {
    auto tid = get_string(body, "transfer_id");
    auto originator = get_string(body, "originator");
    auto beneficiary = get_string(body, "beneficiary");
    auto beneficiary_name = get_string(body, "beneficiary_name");
    auto beneficiary_account = get_string(body, "beneficiary_account");
    auto amount = get_int(body, "amount");
    if (!tid.ok() || !originator.ok() || !beneficiary.ok() || !beneficiary_name.ok() ||
        !beneficiary_account.ok() || !amount.ok()) {
        return;
    }
    if (transfer(tid.value()) != nullptr) return;  // already announced

    TransferRecord record;
    record.transfer_id = tid.value();
    record.role = TransferRole::beneficiary;
    record.originator = originator.value();
    record.beneficiary = beneficiary.value();
    record.beneficiary_name = beneficiary_name.value();
    record.beneficiary_account = beneficiary_account.value();
    record.originating_vasp = message.from_node;
    record.beneficiary_vasp = node_id();
    record.amount = amount.value();
    auto [it, inserted] = transfers_.emplace(record.transfer_id, std::move(record));
    (void)inserted;
    TransferRecord& stored = it->second;

    const CustomerAccount* cust = customer(stored.beneficiary);
    if (cust == nullptr) {
        reject_transfer(stored,
                        make_error(ErrorCode::unknown_customer,
                                   "'" + stored.beneficiary + "' is not onboarded at " +
                                       node_id()),
                        /*notify_peer=*/true, ctx);
        return;
    }
    if (cust->account_id != stored.beneficiary_account) {
        reject_transfer(stored,
                        make_error(ErrorCode::unknown_customer,
                                   "beneficiary account does not match our records"),
                        /*notify_peer=*/true, ctx);
        return;
    }
    const DirectoryEntry* peer = ctx.directory().find(message.from_node);
    if (peer == nullptr || peer->kind != "vasp") {
        reject_transfer(stored, make_error(ErrorCode::unknown_vasp, message.from_node),
                        /*notify_peer=*/false, ctx);
        return;
    }
    if (policy_for(peer->jurisdiction).mode == PolicyMode::blocked) {
        reject_transfer(stored,
                        make_error(ErrorCode::policy_blocked,
                                   "transfers from jurisdiction '" + peer->jurisdiction +
                                       "' are blocked"),
                        /*notify_peer=*/true, ctx);
        return;
    }
    start_gather(stored, ctx);
}

void VaspNode::handle_exchange_ready(const Value& body, const BusMessage& message,
                                     NodeContext& ctx) {
    auto tid = get_string(body, "transfer_id");
    if (!tid.ok()) return;
    TransferRecord* record = transfer(tid.value());
    if (record == nullptr || message.from_node != peer_vasp(*record)) return;
    if (record->state == TransferState::rejected) {
        ctx.send(message.from_node,
                 Value::map({
                     {"detail", record->reject_reason ? record->reject_reason->detail : ""},
                     {"error", std::string(error_code_name(record->reject_reason
                                                               ? record->reject_reason->code
                                                               : ErrorCode::policy_blocked))},
                     {"kind", "exchange_reject"},
                     {"transfer_id", record->transfer_id},
                 }));
        return;
    }
    if (record->state != TransferState::counterparty_verified || record->packet_sent) return;
    send_packet_delivery(*record, ctx);
}

void VaspNode::handle_packet_delivery(const Value& body, const BusMessage& message,
                                      NodeContext& ctx) {
    auto tid = get_string(body, "transfer_id");
    if (!tid.ok()) return;
    TransferRecord* record = transfer(tid.value());
    if (record == nullptr || message.from_node != peer_vasp(*record)) return;
    if (record->state == TransferState::rejected) {
        ctx.send(message.from_node,
                 Value::map({
                     {"detail", record->reject_reason ? record->reject_reason->detail : ""},
                     {"error", std::string(error_code_name(record->reject_reason
                                                               ? record->reject_reason->code
                                                               : ErrorCode::receipt_missing))},
                     {"kind", "exchange_reject"},
                     {"transfer_id", record->transfer_id},
                 }));
        return;
    }
    if (record->state != TransferState::counterparty_verified || record->packet_received) return;

    const DirectoryEntry* peer = ctx.directory().find(message.from_node);
    const Value* packet_record = body.find("packet");
    if (packet_record == nullptr) return;
    auto packet_env = SignedEnvelope::from_value(*packet_record);
    if (!packet_env.ok() || !envelope_ok(packet_env.value(), peer->public_key)) {
        reject_transfer(*record,
                        make_error(ErrorCode::signature_invalid, "packet signature invalid"),
                        /*notify_peer=*/true, ctx);
        return;
    }
    auto packet_payload = packet_env.value().payload_value();
    if (!packet_payload.ok()) {
        reject_transfer(*record, make_error(ErrorCode::incomplete_packet, "unparseable packet"),
                        /*notify_peer=*/true, ctx);
        return;
    }
    auto packet = TravelRulePacket::from_value(packet_payload.value());
    if (!packet.ok()) {
        reject_transfer(*record, packet.error(), /*notify_peer=*/true, ctx);
        return;
    }
    if (packet.value().transfer_id != record->transfer_id) {
        reject_transfer(*record,
                        make_error(ErrorCode::incomplete_packet, "packet names another transfer"),
                        /*notify_peer=*/true, ctx);
        return;
    }

    // Delivered claim sets are about the counterparty's own customer.
    const std::string expected_subject =
        record->role == TransferRole::originating ? record->beneficiary : record->originator;
    std::vector<ClaimSet> delivered;
    if (const Value* claimsets = body.find("claimsets"); claimsets && claimsets->is_list()) {
        for (const auto& item : claimsets->as_list()) {
            auto env = SignedEnvelope::from_value(item);
            if (!env.ok()) continue;
            auto cs = ClaimSet::from_envelope(std::move(env).take());
            if (cs.ok()) delivered.push_back(std::move(cs).take());
        }
    }
    auto claims_check =
        check_delivered_claimsets(*record, delivered, expected_subject, peer->jurisdiction, ctx);
    if (!claims_check.ok()) {
        reject_transfer(*record, claims_check.error(), /*notify_peer=*/true, ctx);
        return;
    }

    const Value* sender_sig_record = body.find("sender_signature");
    if (sender_sig_record == nullptr) return;
    auto sender_sig = SignedEnvelope::from_value(*sender_sig_record);
    if (!sender_sig.ok() || !envelope_ok(sender_sig.value(), peer->public_key)) {
        reject_transfer(*record,
                        make_error(ErrorCode::signature_invalid, "sender signature invalid"),
                        /*notify_peer=*/true, ctx);
        return;
    }
    auto sig_payload = sender_sig.value().payload_value();
    auto delivered_hash =
        sig_payload.ok() ? get_bytes(sig_payload.value(), "delivered_hash")
                         : Result<Bytes>(make_error(ErrorCode::parse_error, "bad payload"));
    if (!delivered_hash.ok() || delivered_hash.value() != envelope_hash(packet_env.value())) {
        reject_transfer(*record,
                        make_error(ErrorCode::signature_invalid,
                                   "sender signature does not cover the delivered packet"),
                        /*notify_peer=*/true, ctx);
        return;
    }

    // Retain everything delivered, then countersign.
    log_.append(packet_env.value(), ctx.now()).value();
    for (const auto& cs : delivered) log_.append(cs.envelope, ctx.now()).value();
    log_.append(sender_sig.value(), ctx.now()).value();

    auto countersig =
        make_countersignature(keys(), record->transfer_id, sender_sig.value(), ctx.now());
    log_.append(countersig, ctx.now()).value();

    NonRepudiationReceipt receipt;
    receipt.transfer_id = record->transfer_id;
    receipt.delivered_hash = delivered_hash.value();
    receipt.sender_signature = sender_sig.value();
    receipt.receiver_countersignature = countersig;

    record->packet_received = packet_env.value();
    record->peer_claimsets = std::move(delivered);
    record->receipt_issued = receipt;

    ctx.send(message.from_node, Value::map({
                                    {"kind", "exchange_receipt"},
                                    {"receipt", receipt.to_value()},
                                    {"transfer_id", record->transfer_id},
                                }));

    if (record->role == TransferRole::beneficiary && !record->packet_sent) {
        send_packet_delivery(*record, ctx);
    }
    maybe_info_exchanged(*record, ctx);
}

void VaspNode::handle_exchange_receipt(const Value& body, const BusMessage& message,
                                       NodeContext& ctx) {
    auto tid = get_string(body, "transfer_id");
    if (!tid.ok()) return;
    TransferRecord* record = transfer(tid.value());
    if (record == nullptr || message.from_node != peer_vasp(*record)) return;
    if (record->state != TransferState::counterparty_verified || !record->packet_sent ||
        record->receipt_for_sent) {
        return;
    }
    const Value* receipt_record = body.find("receipt");
    if (receipt_record == nullptr) return;
    auto receipt = NonRepudiationReceipt::from_value(*receipt_record);
    const DirectoryEntry* peer = ctx.directory().find(message.from_node);
    if (!receipt.ok()) {
        reject_transfer(*record, make_error(ErrorCode::receipt_invalid, "malformed receipt"),
                        /*notify_peer=*/true, ctx);
        return;
    }
    auto checked = verify_receipt(receipt.value(), keys().public_key, peer->public_key);
    if (!checked.ok() ||
        receipt.value().delivered_hash != envelope_hash(*record->packet_sent) ||
        envelope_hash(receipt.value().sender_signature) !=
            envelope_hash(*record->sender_sig_sent)) {
        reject_transfer(*record,
                        make_error(ErrorCode::receipt_invalid,
                                   checked.ok() ? "receipt does not match the delivery"
                                                : checked.error().detail),
                        /*notify_peer=*/true, ctx);
        return;
    }
    log_.append(receipt.value().receiver_countersignature, ctx.now()).value();
    record->receipt_for_sent = std::move(receipt).take();
    maybe_info_exchanged(*record, ctx);
}

void VaspNode::handle_exchange_reject(const Value& body, NodeContext& ctx) {
    auto tid = get_string(body, "transfer_id");
    if (!tid.ok()) return;
    TransferRecord* record = transfer(tid.value());
    if (record == nullptr || record->state == TransferState::rejected ||
        record->state == TransferState::finalized) {
        return;
    }
    auto code = ErrorCode::policy_blocked;
    if (auto name = get_string(body, "error"); name.ok()) {
        if (auto parsed = error_code_from_name(name.value())) code = *parsed;
    }
    std::string detail = "counterparty rejected";
    if (auto d = get_string(body, "detail"); d.ok() && !d.value().empty()) {
        detail += ": " + d.value();
    }
    reject_transfer(*record, make_error(code, detail), /*notify_peer=*/false, ctx);
}

void VaspNode::handle_finalize_notice(const Value& body, NodeContext& ctx) {
    auto tid = get_string(body, "transfer_id");
    if (!tid.ok()) return;
    TransferRecord* record = transfer(tid.value());
    if (record == nullptr) return;
    record->finalize_notice_seen = true;
    if (record->state == TransferState::info_exchanged) {
        auto finalized = finalize(*record, ctx);
        if (!finalized.ok()) {
            ctx.note(node_id() + " finalize on notice failed: " + finalized.error().to_string());
        }
    }
}

Value VaspNode::export_transfers() const {
    Value::List items;
    for (const auto& [tid, record] : transfers_) items.push_back(record.export_record());
    return Value::map({{"transfers", Value(std::move(items))}, {"vasp_id", node_id()}});
}

Value VaspNode::export_balances() const {
    Value::Map accounts;
    for (const auto& [account, balance] : accounts_) {
        accounts.insert_or_assign(account, Value(balance));
    }
    return Value::map({{"accounts", Value(std::move(accounts))}, {"vasp_id", node_id()}});
}

}  // namespace cen
