#include "cen/report.hpp"

#include <algorithm>
#include <set>

namespace cen {

namespace {

bool log_contains(const AuditLog& log, const Bytes& env_hash) {
    for (const auto& entry : log.entries()) {
        if (envelope_hash(entry.envelope) == env_hash) return true;
    }
    return false;
}

const SignedEnvelope* find_packet(const AuditLog& log, const std::string& transfer_id,
                                  const std::string& signer) {
    for (const auto& entry : log.entries()) {
        const SignedEnvelope& env = entry.envelope;
        if (env.payload_type != PayloadType::travel_rule_packet || env.signer_id != signer) {
            continue;
        }
        auto payload = env.payload_value();
        if (!payload.ok()) continue;
        auto tid = get_string(payload.value(), "transfer_id");
        if (tid.ok() && tid.value() == transfer_id) return &env;
    }
    return nullptr;
}

const SignedEnvelope* find_receipt_part(const AuditLog& log, const std::string& transfer_id,
                                        const std::string& signer, const std::string& role,
                                        const char* hash_field, const Bytes& hash_value) {
    for (const auto& entry : log.entries()) {
        const SignedEnvelope& env = entry.envelope;
        if (env.payload_type != PayloadType::receipt || env.signer_id != signer) continue;
        auto payload = env.payload_value();
        if (!payload.ok()) continue;
        auto tid = get_string(payload.value(), "transfer_id");
        auto r = get_string(payload.value(), "role");
        auto h = get_bytes(payload.value(), hash_field);
        if (tid.ok() && tid.value() == transfer_id && r.ok() && r.value() == role && h.ok() &&
            h.value() == hash_value) {
            return &env;
        }
    }
    return nullptr;
}

}  // namespace

Result<NonRepudiationReceipt> reconstruct_receipt(const AuditLog& sender_log,
                                                  const AuditLog& receiver_log,
                                                  const std::string& transfer_id,
                                                  const std::string& sender_id,
                                                  const std::string& receiver_id,
                                                  const KeyLookup& keys) {
    const SignedEnvelope* packet = find_packet(sender_log, transfer_id, sender_id);
    if (packet == nullptr) {
        return make_error(ErrorCode::receipt_missing,
                          "sender log holds no packet for " + transfer_id);
    }
    Bytes delivered = envelope_hash(*packet);
    if (!log_contains(receiver_log, delivered)) {
        return make_error(ErrorCode::receipt_missing, "receiver log lacks the delivered packet");
    }
    const SignedEnvelope* sender_sig = find_receipt_part(
        sender_log, transfer_id, sender_id, "sender_signature", "delivered_hash", delivered);
    if (sender_sig == nullptr) {
        return make_error(ErrorCode::receipt_missing, "sender signature not logged by sender");
    }
    if (!log_contains(receiver_log, envelope_hash(*sender_sig))) {
        return make_error(ErrorCode::receipt_missing, "sender signature not logged by receiver");
    }
    Bytes sig_hash = envelope_hash(*sender_sig);
    const SignedEnvelope* countersig = find_receipt_part(
        receiver_log, transfer_id, receiver_id, "countersignature", "sender_sig_hash", sig_hash);
    if (countersig == nullptr) {
        return make_error(ErrorCode::receipt_missing, "countersignature not logged by receiver");
    }
    if (!log_contains(sender_log, envelope_hash(*countersig))) {
        return make_error(ErrorCode::receipt_missing, "countersignature not logged by sender");
    }

    auto sender_key = keys(sender_id);
    auto receiver_key = keys(receiver_id);
    if (!sender_key || !receiver_key) {
        return make_error(ErrorCode::not_found, "participant keys unavailable");
    }
    NonRepudiationReceipt receipt;
    receipt.transfer_id = transfer_id;
    receipt.delivered_hash = delivered;
    receipt.sender_signature = *sender_sig;
    receipt.receiver_countersignature = *countersig;
    CEN_CHECK_OK(verify_receipt(receipt, *sender_key, *receiver_key));
    return receipt;
}

Value build_report(const std::map<std::string, AuditLog>& logs, const Value& transfers,
                   const KeyLookup& keys) {
    static const AuditLog kEmptyLog;
    auto log_of = [&](const std::string& id) -> const AuditLog& {
        auto it = logs.find(id);
        return it == logs.end() ? kEmptyLog : it->second;
    };

    // Index transfer sides: transfer_id -> (vasp id -> export record).
    std::map<std::string, std::map<std::string, Value>> sides;
    if (const Value* vasps = transfers.find("vasps")) {
        for (const auto& vasp_export : vasps->as_list()) {
            const std::string vasp_id = vasp_export.find("vasp_id")->as_string();
            for (const auto& record : vasp_export.find("transfers")->as_list()) {
                sides[record.find("transfer_id")->as_string()][vasp_id] = record;
            }
        }
    }

    static constexpr const char* kFieldGroups[] = {
        "originator_name", "originator_account", "originator_locator",
        "beneficiary_name", "beneficiary_account",
    };

    Value::List transfer_reports;
    for (const auto& [transfer_id, by_vasp] : sides) {
        Value::Map side_map;
        std::string originating_vasp, beneficiary_vasp;
        std::int64_t amount = 0;
        bool finalized_originating = false;
        for (const auto& [vasp_id, record] : by_vasp) {
            const std::string role = record.find("role")->as_string();
            const std::string state = record.find("state")->as_string();
            if (role == "originating") finalized_originating = state == "Finalized";
            Value side = Value::map({{"role", role}, {"state", state}});
            if (const Value* reason = record.find("reason")) side.set("reason", *reason);
            side_map.insert_or_assign(vasp_id, std::move(side));
            amount = record.find("amount")->as_int();
            originating_vasp = record.find("originating_vasp")->as_string();
            beneficiary_vasp = record.find("beneficiary_vasp")->as_string();
        }

        // Travel-rule completeness over both retention logs.
        bool packets_complete = !originating_vasp.empty() && !beneficiary_vasp.empty();
        Value::List field_groups;
        for (const std::string& side_id : {originating_vasp, beneficiary_vasp}) {
            if (side_id.empty()) {
                packets_complete = false;
                continue;
            }
            const SignedEnvelope* packet = find_packet(log_of(side_id), transfer_id, side_id);
            if (packet == nullptr) {
                packets_complete = false;
                continue;
            }
            auto payload = packet->payload_value();
            auto parsed = payload.ok()
                              ? TravelRulePacket::from_value(payload.value())
                              : Result<TravelRulePacket>(make_error(ErrorCode::parse_error, ""));
            if (!parsed.ok()) {
                packets_complete = false;
                continue;
            }
            // The other side must retain the same packet.
            const std::string other =
                side_id == originating_vasp ? beneficiary_vasp : originating_vasp;
            if (!log_contains(log_of(other), envelope_hash(*packet))) {
                packets_complete = false;
            }
        }
        if (packets_complete) {
            for (const char* group : kFieldGroups) field_groups.push_back(group);
        }

        // Originator claim set retained on both sides.
        bool claims_logged = false;
        if (!originating_vasp.empty() && !beneficiary_vasp.empty()) {
            const auto originator_it = by_vasp.find(originating_vasp);
            std::string originator_subject;
            if (originator_it != by_vasp.end()) {
                originator_subject = originator_it->second.find("originator")->as_string();
            }
            auto has_claimset = [&](const AuditLog& log) {
                for (const auto& entry : log.entries()) {
                    if (entry.envelope.payload_type != PayloadType::claim_set) continue;
                    auto payload = entry.envelope.payload_value();
                    if (!payload.ok()) continue;
                    auto subject = get_string(payload.value(), "subject_id");
                    if (subject.ok() && subject.value() == originator_subject) return true;
                }
                return false;
            };
            claims_logged =
                has_claimset(log_of(originating_vasp)) && has_claimset(log_of(beneficiary_vasp));
        }

        // Receipt chains in both directions, rebuilt from the logs alone.
        Value::Map receipts;
        bool receipts_complete = false;
        if (!originating_vasp.empty() && !beneficiary_vasp.empty()) {
            auto forward = reconstruct_receipt(log_of(originating_vasp), log_of(beneficiary_vasp),
                                               transfer_id, originating_vasp, beneficiary_vasp,
                                               keys);
            auto backward = reconstruct_receipt(log_of(beneficiary_vasp), log_of(originating_vasp),
                                                transfer_id, beneficiary_vasp, originating_vasp,
                                                keys);
            receipts_complete = forward.ok() && backward.ok();
            auto receipt_summary = [](const Result<NonRepudiationReceipt>& r) {
                if (!r.ok()) {
                    return Value::map({{"present", false}, {"detail", r.error().detail}});
                }
                return Value::map({
                    {"countersignature_hash",
                     envelope_hash(r.value().receiver_countersignature)},
                    {"delivered_hash", r.value().delivered_hash},
                    {"present", true},
                    {"sender_signature_hash", envelope_hash(r.value().sender_signature)},
                });
            };
            receipts.insert_or_assign("originating_to_beneficiary", receipt_summary(forward));
            receipts.insert_or_assign("beneficiary_to_originating", receipt_summary(backward));
        }

        transfer_reports.push_back(Value::map({
            {"amount", amount},
            {"claims_retained", claims_logged},
            {"field_groups", Value(std::move(field_groups))},
            {"finalized", finalized_originating},
            {"receipts", Value(std::move(receipts))},
            {"receipts_complete", receipts_complete},
            {"sides", Value(std::move(side_map))},
            {"transfer_id", transfer_id},
            {"travel_rule_complete", packets_complete},
        }));
    }

    Value::Map chains;
    for (const auto& [node, log] : logs) {
        chains.insert_or_assign(node, Value(verify_chain(log, keys)));
    }
    return Value::map({
        {"log_chains", Value(std::move(chains))},
        {"transfers", Value(std::move(transfer_reports))},
    });
}

}  // namespace cen
