#include "cen/audit_log.hpp"

namespace cen {

namespace {

constexpr std::size_t kHashBytes = 32;

Value chain_input(std::int64_t seq, const Bytes& prev_hash, std::int64_t recorded_at,
                  const SignedEnvelope& envelope) {
    return Value::map({
        {"envelope", envelope.to_value()},
        {"prev_hash", prev_hash},
        {"recorded_at", recorded_at},
        {"seq", seq},
    });
}

}  // namespace

Bytes log_entry_hash(std::int64_t seq, const Bytes& prev_hash, std::int64_t recorded_at,
                     const SignedEnvelope& envelope) {
    return sha256(must_canonicalize(chain_input(seq, prev_hash, recorded_at, envelope)));
}

Value LogEntry::to_value() const {
    Value v = chain_input(seq, prev_hash, recorded_at, envelope);
    v.set("entry_hash", entry_hash);
    return v;
}

Result<LogEntry> LogEntry::from_value(const Value& record) {
    LogEntry entry;
    CEN_TRY(seq, get_int(record, "seq"));
    entry.seq = seq;
    CEN_TRY(prev, get_bytes(record, "prev_hash"));
    entry.prev_hash = prev;
    CEN_TRY(hash, get_bytes(record, "entry_hash"));
    entry.entry_hash = hash;
    CEN_TRY(at, get_int(record, "recorded_at"));
    entry.recorded_at = at;
    CEN_TRY(env_record, get_map(record, "envelope"));
    CEN_TRY(env, SignedEnvelope::from_value(Value(*env_record)));
    entry.envelope = env;
    return entry;
}

Result<LogEntry> AuditLog::append(const SignedEnvelope& envelope, std::int64_t now_ms) {
    if (keys_) {
        auto pk = keys_(envelope.signer_id);
        if (!pk) {
            return make_error(ErrorCode::invalid_envelope,
                              "unknown signer '" + envelope.signer_id + "'");
        }
        if (!envelope_ok(envelope, *pk)) {
            return make_error(ErrorCode::invalid_envelope, "envelope does not verify");
        }
    }
    LogEntry entry;
    entry.seq = static_cast<std::int64_t>(entries_.size());
    entry.prev_hash = entries_.empty() ? Bytes::zeros(kHashBytes) : entries_.back().entry_hash;
    entry.recorded_at = now_ms;
    entry.envelope = envelope;
    entry.entry_hash = log_entry_hash(entry.seq, entry.prev_hash, entry.recorded_at, envelope);
    entries_.push_back(entry);
    return entries_.back();
}

Bytes AuditLog::head_hash() const {
    return entries_.empty() ? Bytes::zeros(kHashBytes) : entries_.back().entry_hash;
}

std::string AuditLog::serialize() const {
    std::string out;
    for (const auto& entry : entries_) {
        out += must_canonicalize(entry.to_value());
        out.push_back('\n');
    }
    return out;
}

Result<AuditLog> AuditLog::deserialize(std::string_view text, KeyLookup keys) {
    AuditLog log(std::move(keys));
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) {
            return make_error(ErrorCode::parse_error, "log file missing trailing newline");
        }
        std::string_view line = text.substr(start, end - start);
        if (!line.empty()) {
            CEN_TRY(record, parse_canonical(line));
            CEN_TRY(entry, LogEntry::from_value(record));
            log.entries_.push_back(entry);
        }
        start = end + 1;
    }
    return log;
}

bool verify_chain(const std::vector<LogEntry>& entries, const KeyLookup& keys) {
    Bytes expected_prev = Bytes::zeros(kHashBytes);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const LogEntry& entry = entries[i];
        if (entry.seq != static_cast<std::int64_t>(i)) return false;
        if (entry.prev_hash != expected_prev) return false;
        if (log_entry_hash(entry.seq, entry.prev_hash, entry.recorded_at, entry.envelope) !=
            entry.entry_hash) {
            return false;
        }
        if (keys) {
            auto pk = keys(entry.envelope.signer_id);
            if (!pk || !envelope_ok(entry.envelope, *pk)) return false;
        }
        expected_prev = entry.entry_hash;
    }
    return true;
}

bool verify_chain(const AuditLog& log, const KeyLookup& keys) {
    return verify_chain(log.entries(), keys);
}

}  // namespace cen
