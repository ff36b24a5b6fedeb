#include "cen/audit_log.hpp"

#include <doctest.h>

#include <map>
#include <random>

using namespace cen;

namespace {

struct Fixture {
    KeyPair key = keypair_from_seed("node1", derive_seed(9, "node1"));
    std::map<std::string, Bytes> directory{{"node1", key.public_key}};

    KeyLookup lookup() const {
        return [this](std::string_view id) -> std::optional<Bytes> {
            auto it = directory.find(std::string(id));
            if (it == directory.end()) return std::nullopt;
            return it->second;
        };
    }

    SignedEnvelope envelope(int n) const {
        auto payload = must_canonicalize(Value::map({{"n", n}}));
        return sign_envelope(key, PayloadType::message, payload, 100 + n);
    }
};

// Independent hash walk over the serialized entries, written against the
// record layout alone.
bool oracle_chain_ok(const std::vector<LogEntry>& entries) {
    Bytes prev = Bytes::zeros(32);
    std::int64_t expected_seq = 0;
    for (const auto& e : entries) {
        if (e.seq != expected_seq++) return false;
        if (e.prev_hash != prev) return false;
        Value input = Value::map({
            {"envelope", e.envelope.to_value()},
            {"prev_hash", e.prev_hash},
            {"recorded_at", e.recorded_at},
            {"seq", e.seq},
        });
        Bytes recomputed = sha256(must_canonicalize(input));
        if (recomputed != e.entry_hash) return false;
        prev = e.entry_hash;
    }
    return true;
}

}  // namespace

TEST_CASE("append to empty log creates the genesis entry") {
    Fixture f;
    AuditLog log(f.lookup());
    auto entry = log.append(f.envelope(0), 1000);
    REQUIRE(entry.ok());
    CHECK(entry.value().seq == 0);
    CHECK(entry.value().prev_hash == Bytes::zeros(32));
    CHECK(log.size() == 1);
}

TEST_CASE("second entry links to the first") {
    Fixture f;
    AuditLog log(f.lookup());
    auto e0 = log.append(f.envelope(0), 1000).value();
    auto e1 = log.append(f.envelope(1), 1001).value();
    CHECK(e1.prev_hash == e0.entry_hash);
    CHECK(e1.seq == 1);
}

TEST_CASE("append rejects envelopes that do not verify") {
    Fixture f;
    AuditLog log(f.lookup());
    auto env = f.envelope(0);
    env.payload = must_canonicalize(Value::map({{"n", 999}}));
    auto r = log.append(env, 1000);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error().code == ErrorCode::invalid_envelope);
    auto unknown = sign_envelope(keypair_from_seed("ghost", derive_seed(9, "ghost")),
                                 PayloadType::message, must_canonicalize(Value()), 5);
    CHECK(log.append(unknown, 1000).error().code == ErrorCode::invalid_envelope);
    CHECK(log.empty());
}

TEST_CASE("hundred appends verify under an independent hash walk") {
    Fixture f;
    AuditLog log(f.lookup());
    for (int i = 0; i < 100; ++i) {
        REQUIRE(log.append(f.envelope(i), 1000 + i).ok());
    }
    CHECK(verify_chain(log, f.lookup()));
    CHECK(oracle_chain_ok(log.entries()));
}

TEST_CASE("prefix property") {
    Fixture f;
    AuditLog log(f.lookup());
    for (int i = 0; i < 20; ++i) log.append(f.envelope(i), 1000 + i).value();
    for (std::size_t n = 0; n <= 20; ++n) {
        std::vector<LogEntry> prefix(log.entries().begin(), log.entries().begin() + n);
        CHECK(verify_chain(prefix, f.lookup()));
    }
}

TEST_CASE("payload mutation inside an entry breaks the chain") {
    Fixture f;
    AuditLog log(f.lookup());
    for (int i = 0; i < 10; ++i) log.append(f.envelope(i), 1000 + i).value();
    log.mutable_entries()[4].envelope.payload[0] ^= 0x01;
    CHECK_FALSE(verify_chain(log, f.lookup()));
}

TEST_CASE("splicing an entry out and renumbering is detected") {
    Fixture f;
    AuditLog log(f.lookup());
    for (int i = 0; i < 10; ++i) log.append(f.envelope(i), 1000 + i).value();
    auto& entries = log.mutable_entries();
    entries.erase(entries.begin() + 7);
    for (std::size_t i = 7; i < entries.size(); ++i) {
        entries[i].seq = static_cast<std::int64_t>(i);
    }
    // re-link naively without recomputing entry hashes
    entries[7].prev_hash = entries[6].entry_hash;
    CHECK_FALSE(verify_chain(log, f.lookup()));
    CHECK_FALSE(oracle_chain_ok(entries));
}

TEST_CASE("any single bit flip in the stored log fails verification") {
    Fixture f;
    AuditLog log(f.lookup());
    for (int i = 0; i < 5; ++i) log.append(f.envelope(i), 1000 + i).value();
    std::string stored = log.serialize();
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        std::string mutated = stored;
        std::size_t pos = rng() % mutated.size();
        mutated[pos] ^= static_cast<char>(1 << (rng() % 8));
        auto reloaded = AuditLog::deserialize(mutated, f.lookup());
        if (reloaded.ok()) {
            CHECK_FALSE(verify_chain(reloaded.value(), f.lookup()));
        }
    }
}

TEST_CASE("serialize and reload round trip") {
    Fixture f;
    AuditLog log(f.lookup());
    for (int i = 0; i < 8; ++i) log.append(f.envelope(i), 2000 + i).value();
    auto text = log.serialize();
    auto reloaded = AuditLog::deserialize(text, f.lookup());
    REQUIRE(reloaded.ok());
    CHECK(reloaded.value().size() == 8);
    CHECK(verify_chain(reloaded.value(), f.lookup()));
    CHECK(reloaded.value().serialize() == text);
    CHECK(reloaded.value().head_hash() == log.head_hash());
}
