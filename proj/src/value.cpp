#include "cen/value.hpp"

#include <charconv>
#include <cstdio>
#include <limits>

namespace cen {

const Value* Value::find(std::string_view key) const {
    if (!is_map()) return nullptr;
    const auto& m = as_map();
    auto it = m.find(std::string(key));
    return it == m.end() ? nullptr : &it->second;
}

namespace {

// Validates UTF-8 (RFC 3629: no surrogates, no overlong forms, max U+10FFFF).
bool valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        if (len == 2 && cp < 0x80) return false;
        if (len == 3 && cp < 0x800) return false;
        if (len == 4 && cp < 0x10000) return false;
        if (cp > 0x10ffff) return false;
        if (cp >= 0xd800 && cp <= 0xdfff) return false;
        i += len;
    }
    return true;
}

void write_escaped(const std::string& s, std::string& out) {
    out.push_back('"');
    for (unsigned char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\b': out += "\\b"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\f': out += "\\f"; break;
            case '\r': out += "\\r"; break;
            default:
                if (c < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out.push_back(static_cast<char>(c));
                }
        }
    }
    out.push_back('"');
}

Result<void> write_value(const Value& v, std::string& out) {
    if (v.is_bool()) {
        out += v.as_bool() ? "true" : "false";
    } else if (v.is_int()) {
        out += std::to_string(v.as_int());
    } else if (v.is_string()) {
        if (!valid_utf8(v.as_string())) {
            return make_error(ErrorCode::unsupported_type, "string is not valid UTF-8");
        }
        write_escaped(v.as_string(), out);
    } else if (v.is_bytes()) {
        out.push_back('"');
        out += base64url_encode(v.as_bytes());
        out.push_back('"');
    } else if (v.is_list()) {
        out.push_back('[');
        bool first = true;
        for (const auto& item : v.as_list()) {
            if (!first) out.push_back(',');
            first = false;
            CEN_CHECK_OK(write_value(item, out));
        }
        out.push_back(']');
    } else {
        out.push_back('{');
        bool first = true;
        for (const auto& [key, item] : v.as_map()) {
            if (!valid_utf8(key)) {
                return make_error(ErrorCode::unsupported_type, "map key is not valid UTF-8");
            }
            if (!first) out.push_back(',');
            first = false;
            write_escaped(key, out);
            out.push_back(':');
            CEN_CHECK_OK(write_value(item, out));
        }
        out.push_back('}');
    }
    return ok();
}

class Parser {
  public:
    Parser(std::string_view text, bool lenient) : text_(text), lenient_(lenient) {}

    Result<Value> run() {
        skip_ws();
        CEN_TRY(v, parse_value());
        skip_ws();
        if (pos_ != text_.size()) {
            return fail("trailing data after document");
        }
        return v;
    }

  private:
    Error fail(std::string msg) const {
        return make_error(ErrorCode::parse_error, msg + " at offset " + std::to_string(pos_));
    }

    void skip_ws() {
        if (!lenient_) return;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos_;
            } else {
                break;
            }
        }
    }

    bool eat(char c) {
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Result<Value> parse_value() {
        if (pos_ >= text_.size()) return fail("unexpected end of input");
        if (depth_ > kMaxDepth) return fail("nesting too deep");
        char c = text_[pos_];
        switch (c) {
            case '{': return parse_map();
            case '[': return parse_list();
            case '"': {
                CEN_TRY(s, parse_string());
                return Value(std::move(s));
            }
            case 't':
                if (text_.substr(pos_, 4) == "true") {
                    pos_ += 4;
                    return Value(true);
                }
                return fail("invalid token");
            case 'f':
                if (text_.substr(pos_, 5) == "false") {
                    pos_ += 5;
                    return Value(false);
                }
                return fail("invalid token");
            case 'n':
                if (text_.substr(pos_, 4) == "null") {
                    return Error{ErrorCode::unsupported_type,
                                 "null is outside the wire data model"};
                }
                return fail("invalid token");
            default:
                if (c == '-' || (c >= '0' && c <= '9')) return parse_number();
                return fail("unexpected character");
        }
    }

    Result<Value> parse_number() {
        std::size_t start = pos_;
        if (eat('-')) {
            // fallthrough to digits
        }
        std::size_t digits_start = pos_;
        while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
        if (pos_ == digits_start) return fail("expected digits");
        if (pos_ < text_.size() && (text_[pos_] == '.' || text_[pos_] == 'e' || text_[pos_] == 'E')) {
            return Error{ErrorCode::unsupported_type,
                         "fractional numbers are outside the wire data model"};
        }
        std::string_view token = text_.substr(start, pos_ - start);
        std::string_view digits = text_.substr(digits_start, pos_ - digits_start);
        if (digits.size() > 1 && digits[0] == '0') return fail("leading zeros");
        if (token == "-0") return fail("negative zero");
        std::int64_t n = 0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), n);
        if (ec != std::errc{} || ptr != token.data() + token.size()) {
            return fail("integer out of range");
        }
        return Value(n);
    }

    Result<std::string> parse_string() {
        if (!eat('"')) return fail("expected string");
        std::string out;
        while (true) {
            if (pos_ >= text_.size()) return fail("unterminated string");
            unsigned char c = static_cast<unsigned char>(text_[pos_]);
            if (c == '"') {
                ++pos_;
                break;
            }
            if (c < 0x20) return fail("raw control character in string");
            if (c == '\\') {
                ++pos_;
                if (pos_ >= text_.size()) return fail("unterminated escape");
                char e = text_[pos_++];
                switch (e) {
                    case '"': out.push_back('"'); break;
                    case '\\': out.push_back('\\'); break;
                    case '/':
                        if (!lenient_) return fail("non-canonical escape");
                        out.push_back('/');
                        break;
                    case 'b': out.push_back('\b'); break;
                    case 't': out.push_back('\t'); break;
                    case 'n': out.push_back('\n'); break;
                    case 'f': out.push_back('\f'); break;
                    case 'r': out.push_back('\r'); break;
                    case 'u': {
                        CEN_TRY(cp, parse_hex4());
                        if (cp >= 0xd800 && cp <= 0xdfff) {
                            // Surrogate pairs only in lenient mode; canonical
                            // form carries non-ASCII as raw UTF-8.
                            if (!lenient_ || cp >= 0xdc00) return fail("bad surrogate");
                            if (!eat('\\') || !eat('u')) return fail("unpaired surrogate");
                            CEN_TRY(lo, parse_hex4());
                            if (lo < 0xdc00 || lo > 0xdfff) return fail("unpaired surrogate");
                            std::uint32_t full = 0x10000 + ((cp - 0xd800) << 10) + (lo - 0xdc00);
                            append_utf8(full, out);
                        } else {
                            if (!lenient_ && (cp >= 0x20 || cp == 0x08 || cp == 0x09 ||
                                              cp == 0x0a || cp == 0x0c || cp == 0x0d)) {
                                return fail("non-canonical escape");
                            }
                            append_utf8(cp, out);
                        }
                        break;
                    }
                    default: return fail("invalid escape");
                }
            } else {
                out.push_back(static_cast<char>(c));
                ++pos_;
            }
        }
        if (!valid_utf8(out)) return fail("invalid UTF-8 in string");
        return out;
    }

    Result<std::uint32_t> parse_hex4() {
        if (pos_ + 4 > text_.size()) return fail("truncated \\u escape");
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            char c = text_[pos_ + k];
            v <<= 4;
            if (c >= '0' && c <= '9') v |= static_cast<std::uint32_t>(c - '0');
            else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint32_t>(c - 'a' + 10);
            else if (!lenient_) return fail("uppercase hex in escape");
            else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint32_t>(c - 'A' + 10);
            else return fail("invalid hex digit");
        }
        pos_ += 4;
        return v;
    }

    static void append_utf8(std::uint32_t cp, std::string& out) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        } else {
            out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
        }
    }

    struct DepthGuard {
        int& depth;
        explicit DepthGuard(int& d) : depth(d) { ++depth; }
        ~DepthGuard() { --depth; }
    };

    Result<Value> parse_list() {
        eat('[');
        DepthGuard guard(depth_);
        Value::List items;
        skip_ws();
        if (eat(']')) return Value(std::move(items));
        while (true) {
            skip_ws();
            CEN_TRY(v, parse_value());
            items.push_back(std::move(v));
            skip_ws();
            if (eat(']')) break;
            if (!eat(',')) return fail("expected ',' or ']'");
        }
        return Value(std::move(items));
    }

    Result<Value> parse_map() {
        eat('{');
        DepthGuard guard(depth_);
        Value::Map out;
        skip_ws();
        if (eat('}')) return Value(std::move(out));
        std::string prev_key;
        bool have_prev = false;
        while (true) {
            skip_ws();
            CEN_TRY(key, parse_string());
            if (!lenient_ && have_prev && key <= prev_key) {
                return fail("map keys not strictly sorted");
            }
            skip_ws();
            if (!eat(':')) return fail("expected ':'");
            skip_ws();
            CEN_TRY(v, parse_value());
            if (!out.emplace(key, std::move(v)).second) {
                return fail("duplicate map key '" + key + "'");
            }
            prev_key = std::move(key);
            have_prev = true;
            skip_ws();
            if (eat('}')) break;
            if (!eat(',')) return fail("expected ',' or '}'");
        }
        return Value(std::move(out));
    }

    static constexpr int kMaxDepth = 128;

    std::string_view text_;
    bool lenient_;
    std::size_t pos_ = 0;
    int depth_ = 0;
};

}  // namespace

Result<CanonicalBytes> canonicalize(const Value& value) {
    std::string out;
    CEN_CHECK_OK(write_value(value, out));
    return out;
}

CanonicalBytes must_canonicalize(const Value& value) {
    auto r = canonicalize(value);
    if (!r.ok()) throw std::logic_error("must_canonicalize: " + r.error().to_string());
    return std::move(r).take();
}

Result<Value> parse_canonical(std::string_view text) {
    CEN_TRY(v, Parser(text, /*lenient=*/false).run());
    // Round-trip equality pins anything the grammar checks might have missed.
    CEN_TRY(encoded, canonicalize(v));
    if (encoded != text) {
        return make_error(ErrorCode::parse_error, "input is not in canonical form");
    }
    return v;
}

Result<Value> parse_document(std::string_view text) {
    return Parser(text, /*lenient=*/true).run();
}

namespace {

Result<const Value*> require_field(const Value& record, std::string_view key) {
    if (!record.is_map()) {
        return make_error(ErrorCode::parse_error, "expected a map record");
    }
    const Value* v = record.find(key);
    if (v == nullptr) {
        return make_error(ErrorCode::parse_error, "missing field '" + std::string(key) + "'");
    }
    return v;
}

Error type_error(std::string_view key, std::string_view want) {
    return make_error(ErrorCode::parse_error,
                      "field '" + std::string(key) + "' is not a " + std::string(want));
}

}  // namespace

Result<std::int64_t> get_int(const Value& record, std::string_view key) {
    CEN_TRY(v, require_field(record, key));
    if (!v->is_int()) return type_error(key, "integer");
    return v->as_int();
}

Result<bool> get_bool(const Value& record, std::string_view key) {
    CEN_TRY(v, require_field(record, key));
    if (!v->is_bool()) return type_error(key, "boolean");
    return v->as_bool();
}

Result<std::string> get_string(const Value& record, std::string_view key) {
    CEN_TRY(v, require_field(record, key));
    if (!v->is_string()) return type_error(key, "string");
    return v->as_string();
}

Result<Bytes> get_bytes(const Value& record, std::string_view key) {
    CEN_TRY(v, require_field(record, key));
    if (v->is_bytes()) return v->as_bytes();
    if (v->is_string()) {
        auto decoded = base64url_decode(v->as_string());
        if (!decoded.ok()) return type_error(key, "base64url byte string");
        return std::move(decoded).take();
    }
    return type_error(key, "byte string");
}

Result<const Value::List*> get_list(const Value& record, std::string_view key) {
    CEN_TRY(v, require_field(record, key));
    if (!v->is_list()) return type_error(key, "list");
    return &v->as_list();
}

Result<const Value::Map*> get_map(const Value& record, std::string_view key) {
    CEN_TRY(v, require_field(record, key));
    if (!v->is_map()) return type_error(key, "map");
    return &v->as_map();
}

Result<std::vector<std::string>> get_string_list(const Value& record, std::string_view key) {
    CEN_TRY(items, get_list(record, key));
    std::vector<std::string> out;
    out.reserve(items->size());
    for (const auto& item : *items) {
        if (!item.is_string()) return type_error(key, "list of strings");
        out.push_back(item.as_string());
    }
    return out;
}

}  // namespace cen
