#pragma once

#include <concepts>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cen/bytes.hpp"
#include "cen/result.hpp"

namespace cen {

/// Canonical wire form of a Value: UTF-8 text, lexicographically sorted map
/// keys, no insignificant whitespace, decimal integers without leading zeros,
/// binary fields as unpadded base64url strings, booleans as literal tokens.
using CanonicalBytes = std::string;

/// Structured record in the wire data model: booleans, 64-bit integers,
/// UTF-8 strings, byte strings, lists and string-keyed maps. Nothing else
/// (no floats, no null) is representable on the wire.
class Value {
  public:
    using List = std::vector<Value>;
    using Map = std::map<std::string, Value>;

    Value() : v_(Map{}) {}
    Value(bool b) : v_(b) {}
    template <std::integral T>
        requires(!std::same_as<T, bool>)
    Value(T n) : v_(static_cast<std::int64_t>(n)) {}
    Value(const char* s) : v_(std::string(s)) {}
    Value(std::string s) : v_(std::move(s)) {}
    Value(std::string_view s) : v_(std::string(s)) {}
    Value(Bytes b) : v_(std::move(b)) {}
    Value(List l) : v_(std::move(l)) {}
    Value(Map m) : v_(std::move(m)) {}

    static Value map(std::initializer_list<std::pair<const std::string, Value>> items) {
        return Value(Map(items));
    }
    static Value list(std::initializer_list<Value> items) { return Value(List(items)); }

    template <typename T>
    static Value list_of(const std::vector<T>& items) {
        List out;
        out.reserve(items.size());
        for (const auto& item : items) out.emplace_back(item);
        return Value(std::move(out));
    }

    bool is_bool() const { return std::holds_alternative<bool>(v_); }
    bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
    bool is_string() const { return std::holds_alternative<std::string>(v_); }
    bool is_bytes() const { return std::holds_alternative<Bytes>(v_); }
    bool is_list() const { return std::holds_alternative<List>(v_); }
    bool is_map() const { return std::holds_alternative<Map>(v_); }

    bool as_bool() const { return std::get<bool>(v_); }
    std::int64_t as_int() const { return std::get<std::int64_t>(v_); }
    const std::string& as_string() const { return std::get<std::string>(v_); }
    const Bytes& as_bytes() const { return std::get<Bytes>(v_); }
    const List& as_list() const { return std::get<List>(v_); }
    const Map& as_map() const { return std::get<Map>(v_); }
    Map& as_map() { return std::get<Map>(v_); }
    List& as_list() { return std::get<List>(v_); }

    /// Map member lookup; nullptr when absent or not a map.
    const Value* find(std::string_view key) const;
    void set(std::string key, Value v) { as_map().insert_or_assign(std::move(key), std::move(v)); }

    bool operator==(const Value&) const = default;

  private:
    std::variant<bool, std::int64_t, std::string, Bytes, List, Map> v_;
};

/// Deterministic encoding: logically equal values yield identical bytes
/// regardless of construction order. Fails with UnsupportedType when a
/// string is not valid UTF-8.
Result<CanonicalBytes> canonicalize(const Value& value);

/// canonicalize() for values known valid by construction; throws on misuse.
CanonicalBytes must_canonicalize(const Value& value);

/// Strict parse: accepts exactly the canonical encoding (no whitespace,
/// sorted keys, shortest-form escapes). Binary fields come back as their
/// base64url string form; schema owners decode where they expect bytes.
Result<Value> parse_canonical(std::string_view text);

/// Lenient parse for human-edited documents: whitespace and any key order
/// are accepted, duplicate keys are not. The data model is unchanged:
/// floats and null are rejected with UnsupportedType.
Result<Value> parse_document(std::string_view text);

// Typed field accessors for decoding wire records.
Result<std::int64_t> get_int(const Value& record, std::string_view key);
Result<bool> get_bool(const Value& record, std::string_view key);
Result<std::string> get_string(const Value& record, std::string_view key);
Result<Bytes> get_bytes(const Value& record, std::string_view key);
Result<const Value::List*> get_list(const Value& record, std::string_view key);
Result<const Value::Map*> get_map(const Value& record, std::string_view key);
Result<std::vector<std::string>> get_string_list(const Value& record, std::string_view key);

}  // namespace cen
