#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>

#include "cen/audit_log.hpp"
#include "cen/envelope.hpp"

namespace cen {

struct DirectoryEntry {
    std::string id;
    std::string kind;  // vasp | claims_provider | auth_service | data_provider |
                       // registry | resolver | subject | root
    Bytes public_key;
    std::string jurisdiction;  // vasps only
};

/// Network membership list: every participant id with its public key. Models
/// the shared directory a consortium maintains out of band.
class Directory {
  public:
    void add(DirectoryEntry entry);
    const DirectoryEntry* find(std::string_view id) const;
    KeyLookup key_lookup() const;
    const std::map<std::string, DirectoryEntry>& entries() const { return entries_; }

    /// Public-key export; consumed by the offline log verifier.
    Value keys_value() const;

  private:
    std::map<std::string, DirectoryEntry> entries_;
};

struct BusMessage {
    std::int64_t msg_id = 0;
    std::string from_node;
    std::string to_node;
    SignedEnvelope envelope;  // outer transport envelope, signed by the sender
    std::int64_t enqueued_at = 0;
    std::int64_t deliver_at = 0;
    bool sealed = false;  // confidential-transport marking
};

enum class FaultActionKind { drop, delay, duplicate };

struct MessagePattern {
    std::optional<std::string> from_node;
    std::optional<std::string> to_node;
    std::optional<std::string> kind;  // inner payload kind

    bool matches(std::string_view from, std::string_view to, std::string_view payload_kind) const;
};

struct FaultRule {
    MessagePattern pattern;
    FaultActionKind action = FaultActionKind::drop;
    std::int64_t delay_ms = 0;
    std::int64_t remaining = -1;  // -1 = unlimited
};

class Settlement;

/// Capabilities the simulator hands a node while it processes one event.
class NodeContext {
  public:
    virtual ~NodeContext() = default;
    virtual std::int64_t now() const = 0;
    virtual void send(const std::string& to, const Value& body) = 0;
    virtual void set_timer(std::int64_t delay_ms, const std::string& key) = 0;
    virtual const Directory& directory() const = 0;
    virtual Settlement& settlement() = 0;
    virtual void note(const std::string& text) = 0;  // trace annotation
};

/// The settlement rail moving asset units between customer accounts held at
/// two VASPs. Executes atomically and exactly once per transfer.
class Settlement {
  public:
    virtual ~Settlement() = default;
    virtual Result<void> settle(const std::string& transfer_id, const std::string& from_vasp,
                                const std::string& from_account, const std::string& to_vasp,
                                const std::string& to_account, std::int64_t amount) = 0;
};

/// Single-threaded actor stepped by the simulator. Duplicate deliveries are
/// absorbed here by msg_id.
class Node {
  public:
    explicit Node(KeyPair key) : key_(std::move(key)) {}
    virtual ~Node() = default;

    const std::string& node_id() const { return key_.key_id; }
    const KeyPair& keys() const { return key_; }

    void deliver(const BusMessage& message, const Value& body, NodeContext& ctx);
    virtual void on_timer(std::string_view key, NodeContext& ctx);

    virtual AuditLog* audit_log() { return nullptr; }

  protected:
    virtual void on_message(const Value& body, const BusMessage& message, NodeContext& ctx) = 0;

  private:
    KeyPair key_;
    std::set<std::int64_t> seen_;
};

}  // namespace cen
