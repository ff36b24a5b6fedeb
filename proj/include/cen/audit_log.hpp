#pragma once

#include <cstdint>
#include <vector>

#include "cen/envelope.hpp"

namespace cen {

struct LogEntry {
    std::int64_t seq = 0;
    Bytes prev_hash;  // all-zero for seq 0
    Bytes entry_hash;
    std::int64_t recorded_at = 0;
    SignedEnvelope envelope;

    Value to_value() const;
    static Result<LogEntry> from_value(const Value& record);
};

/// Hash over (seq, prev_hash, recorded_at, envelope) in canonical form.
Bytes log_entry_hash(std::int64_t seq, const Bytes& prev_hash, std::int64_t recorded_at,
                     const SignedEnvelope& envelope);

/// Append-only, hash-chained retention log. Single writer; entries are
/// immutable once appended.
class AuditLog {
  public:
    AuditLog() = default;
    explicit AuditLog(KeyLookup keys) : keys_(std::move(keys)) {}

    /// Rejects envelopes that do not verify (InvalidEnvelope).
    Result<LogEntry> append(const SignedEnvelope& envelope, std::int64_t now_ms);

    const std::vector<LogEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    Bytes head_hash() const;

    /// One canonical record per line, trailing newline per entry.
    std::string serialize() const;

    static Result<AuditLog> deserialize(std::string_view text, KeyLookup keys);

    // Test hook: raw mutable access, bypassing the append discipline.
    std::vector<LogEntry>& mutable_entries() { return entries_; }

  private:
    KeyLookup keys_;
    std::vector<LogEntry> entries_;
};

/// true iff every entry's hash recomputes, every link matches, seq values
/// are contiguous from 0, and every envelope verifies.
bool verify_chain(const AuditLog& log, const KeyLookup& keys);
bool verify_chain(const std::vector<LogEntry>& entries, const KeyLookup& keys);

}  // namespace cen
