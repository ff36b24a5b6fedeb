#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cen/bus.hpp"
#include "cen/claims_provider.hpp"
#include "cen/key_registry.hpp"

namespace cen {

enum class LocatorKind {
    geographic_address,
    national_identity_number,
    customer_identification_number,
    date_and_place_of_birth,
};

std::string_view locator_kind_name(LocatorKind k);
std::optional<LocatorKind> locator_kind_from_name(std::string_view name);

/// The five originator/beneficiary field groups exchanged VASP-to-VASP with
/// every virtual-asset transfer. The locator holds exactly one variant.
struct TravelRulePacket {
    std::string transfer_id;
    std::string originator_name;
    std::string originator_account;
    LocatorKind locator_kind = LocatorKind::geographic_address;
    std::string locator_value;
    std::string beneficiary_name;
    std::string beneficiary_account;

    Value to_value() const;
    /// IncompletePacket when any of the five field groups is missing or the
    /// locator does not hold exactly one variant.
    static Result<TravelRulePacket> from_value(const Value& record);
};

/// Countersigned delivery evidence: the sender signs over the delivered
/// envelope's hash, the receiver countersigns over the sender signature's
/// hash. Either log alone proves one side; both together close the loop.
struct NonRepudiationReceipt {
    std::string transfer_id;
    Bytes delivered_hash;
    SignedEnvelope sender_signature;
    SignedEnvelope receiver_countersignature;

    Value to_value() const;
    static Result<NonRepudiationReceipt> from_value(const Value& record);
};

SignedEnvelope make_sender_signature(const KeyPair& sender, std::string_view transfer_id,
                                     const Bytes& delivered_hash, std::int64_t now_ms);
SignedEnvelope make_countersignature(const KeyPair& receiver, std::string_view transfer_id,
                                     const SignedEnvelope& sender_signature, std::int64_t now_ms);

/// ReceiptInvalid unless both signatures verify and the inner hashes line up.
Result<void> verify_receipt(const NonRepudiationReceipt& receipt, const Bytes& sender_key,
                            const Bytes& receiver_key);

enum class TransferState {
    initiated,
    claims_gathered,
    counterparty_verified,
    info_exchanged,
    finalized,
    rejected,
};
std::string_view transfer_state_name(TransferState s);

enum class TransferRole { originating, beneficiary };

struct TransferRecord {
    std::string transfer_id;
    TransferRole role = TransferRole::originating;
    std::string originator;   // subject id
    std::string beneficiary;  // subject id
    std::string beneficiary_name;
    std::string beneficiary_account;
    std::string originating_vasp;
    std::string beneficiary_vasp;
    std::int64_t amount = 0;
    TransferState state = TransferState::initiated;
    std::optional<Error> reject_reason;
    std::optional<Error> last_error;  // non-terminal failure, state unchanged

    std::vector<ClaimSet> claimsets;       // gathered about our own customer
    std::vector<ClaimSet> peer_claimsets;  // delivered by the counterparty
    std::optional<SignedEnvelope> packet_sent;
    std::optional<SignedEnvelope> packet_received;
    std::optional<SignedEnvelope> sender_sig_sent;
    std::optional<NonRepudiationReceipt> receipt_for_sent;  // peer countersigned us
    std::optional<NonRepudiationReceipt> receipt_issued;    // we countersigned peer

    // gather pipeline bookkeeping
    enum class Stage { idle, resolving, authenticating, requesting_claims };
    Stage stage = Stage::idle;
    std::int64_t stage_deadline = 0;
    std::int64_t receipt_deadline = 0;
    std::optional<AccessToken> token;
    // A finalize notice can overtake the last countersignature under jitter;
    // it is remembered here and applied once the exchange completes.
    bool finalize_notice_seen = false;

    Value export_record() const;
};

enum class PolicyMode { allowed, blocked, require_extra_claim };
std::string_view policy_mode_name(PolicyMode m);
std::optional<PolicyMode> policy_mode_from_name(std::string_view name);

struct PolicyEntry {
    PolicyMode mode = PolicyMode::allowed;
    std::string required_algo;  // require_extra_claim only
};

struct CustomerAccount {
    std::string subject_id;
    std::string account_id;
    std::string name;
    LocatorKind locator_kind = LocatorKind::geographic_address;
    std::string locator_value;
    std::string claims_provider;  // direct claims-provider naming, or
    std::string did;              // discovery via the resolver
    std::optional<KeyOwnershipAttestation> ownership;
    std::optional<CustodyAttestation> custody;
};

struct VaspOptions {
    std::string jurisdiction;
    TrustedRoots trusted_roots;
    std::vector<std::string> gather_algos;
    std::map<std::string, std::string> credentials;  // claims-provider id -> secret
    std::map<std::string, PolicyEntry> policy;       // counterpart jurisdiction -> entry
    PolicyMode policy_default = PolicyMode::allowed;
    std::string resolver_node;
    std::int64_t receipt_timeout_ms = 10'000;
    std::int64_t request_timeout_ms = 10'000;
};

/// VASP state machine: onboarding, claims gathering, counterparty key
/// verification, travel-rule exchange with countersigned receipts, transfer
/// finalization. Owns its customers, transfers, account ledger and audit log.
class VaspNode : public Node {
  public:
    VaspNode(KeyPair key, VaspOptions options, KeyLookup keys);

    AuditLog* audit_log() override { return &log_; }
    const AuditLog& log() const { return log_; }
    const VaspOptions& options() const { return options_; }

    void add_customer(CustomerAccount customer, std::int64_t opening_balance);
    const CustomerAccount* customer(std::string_view subject_id) const;
    Result<void> attach_ownership(std::string_view subject_id, KeyOwnershipAttestation attestation);
    Result<void> attach_custody(std::string_view subject_id, CustodyAttestation attestation);

    const std::map<std::string, std::int64_t>& accounts() const { return accounts_; }
    Result<void> credit(const std::string& account_id, std::int64_t amount);
    Result<void> debit(const std::string& account_id, std::int64_t amount);

    const std::map<std::string, TransferRecord>& transfers() const { return transfers_; }
    TransferRecord* transfer(std::string_view transfer_id);

    /// Creates the transfer record and starts the pipeline.
    Result<std::string> initiate_transfer(const std::string& originator,
                                          const std::string& beneficiary,
                                          const std::string& beneficiary_name,
                                          const std::string& beneficiary_account,
                                          const std::string& beneficiary_vasp, std::int64_t amount,
                                          NodeContext& ctx);

    /// Local check of the customer's attestation against our trusted roots.
    /// On success the transfer advances to counterparty_verified.
    Result<void> verify_counterparty(TransferRecord& record, std::int64_t now_ms);

    /// Settles and marks finalized; idempotent.
    Result<void> finalize(TransferRecord& record, NodeContext& ctx);

    /// Policy verdict for a counterpart jurisdiction.
    const PolicyEntry& policy_for(std::string_view jurisdiction) const;

    void on_timer(std::string_view key, NodeContext& ctx) override;

    Value export_transfers() const;
    Value export_balances() const;

  protected:
    void on_message(const Value& body, const BusMessage& message, NodeContext& ctx) override;

  private:
    void start_gather(TransferRecord& record, NodeContext& ctx);
    void request_auth(TransferRecord& record, NodeContext& ctx);
    void gather_failed(TransferRecord& record, Error error, NodeContext& ctx);
    void after_counterparty_verified(TransferRecord& record, NodeContext& ctx);
    void start_exchange(TransferRecord& record, NodeContext& ctx);
    void send_packet_delivery(TransferRecord& record, NodeContext& ctx);
    void reject_transfer(TransferRecord& record, Error error, bool notify_peer, NodeContext& ctx);
    void maybe_info_exchanged(TransferRecord& record, NodeContext& ctx);
    std::string peer_vasp(const TransferRecord& record) const;
    Result<void> check_delivered_claimsets(const TransferRecord& record,
                                           const std::vector<ClaimSet>& delivered,
                                           std::string_view expected_subject,
                                           std::string_view counterpart_jurisdiction,
                                           NodeContext& ctx) const;
    TravelRulePacket build_packet(const TransferRecord& record) const;

    void handle_transfer_request(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_onboard(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_resolve_response(const Value& body, NodeContext& ctx);
    void handle_auth_response(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_claims_response(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_transfer_announce(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_exchange_ready(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_packet_delivery(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_exchange_receipt(const Value& body, const BusMessage& message, NodeContext& ctx);
    void handle_exchange_reject(const Value& body, NodeContext& ctx);
    void handle_finalize_notice(const Value& body, NodeContext& ctx);

    VaspOptions options_;
    KeyLookup keys_;
    AuditLog log_;
    std::map<std::string, CustomerAccount> customers_;
    std::map<std::string, std::int64_t> accounts_;
    std::map<std::string, TransferRecord> transfers_;
    std::uint64_t transfer_counter_ = 0;
};

}  // namespace cen
