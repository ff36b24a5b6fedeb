#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace cen {

enum class ErrorCode {
    unsupported_type,
    parse_error,
    malformed_envelope,
    invalid_envelope,
    bad_signature,
    duplicate_algorithm,
    vetting_required,
    unknown_algorithm,
    schema_mismatch,
    consent_missing,
    consent_expired,
    aggregate_too_small,
    no_subject_data,
    unknown_vasp,
    bad_credential,
    no_entitled_algorithms,
    token_invalid,
    token_expired,
    scope_exceeded,
    all_algorithms_failed,
    possession_failed,
    enrollment_missing,
    nonce_replayed,
    stale_record,
    not_found,
    unknown_customer,
    claims_unavailable,
    signature_invalid,
    ownership_unattested,
    untrusted_root,
    attestation_expired,
    incomplete_packet,
    receipt_missing,
    policy_blocked,
    receipt_invalid,
    config_invalid,
    invalid_argument,
};

/// Stable wire name, e.g. ErrorCode::consent_missing -> "ConsentMissing".
std::string_view error_code_name(ErrorCode code);
std::optional<ErrorCode> error_code_from_name(std::string_view name);

struct Error {
    ErrorCode code;
    std::string detail;

    std::string to_string() const;
};

inline Error make_error(ErrorCode code, std::string detail = {}) {
    return Error{code, std::move(detail)};
}

template <typename T>
class [[nodiscard]] Result {
  public:
    Result(T value) : state_(std::move(value)) {}
    Result(Error error) : state_(std::move(error)) {}

    bool ok() const { return std::holds_alternative<T>(state_); }
    explicit operator bool() const { return ok(); }

    const T& value() const& {
        require_ok();
        return std::get<T>(state_);
    }
    T& value() & {
        require_ok();
        return std::get<T>(state_);
    }
    T&& take() && {
        require_ok();
        return std::get<T>(std::move(state_));
    }

    const Error& error() const {
        if (ok()) throw std::logic_error("Result::error() on ok result");
        return std::get<Error>(state_);
    }
    ErrorCode code() const { return error().code; }

  private:
    void require_ok() const {
        if (!ok()) throw std::logic_error("Result::value() on error: " + std::get<Error>(state_).to_string());
    }

    std::variant<T, Error> state_;
};

template <>
class [[nodiscard]] Result<void> {
  public:
    Result() = default;
    Result(Error error) : error_(std::move(error)) {}

    static Result ok_result() { return Result(); }

    bool ok() const { return !error_.has_value(); }
    explicit operator bool() const { return ok(); }

    /// Unwrap: throws when the result carries an error.
    void value() const {
        if (!ok()) throw std::logic_error("Result::value() on error: " + error_->to_string());
    }

    const Error& error() const {
        if (ok()) throw std::logic_error("Result::error() on ok result");
        return *error_;
    }
    ErrorCode code() const { return error().code; }

  private:
    std::optional<Error> error_;
};

inline Result<void> ok() { return Result<void>(); }

}  // namespace cen

// Unwraps a Result expression into `lhs`, propagating the error on failure.
#define CEN_TRY(lhs, expr)                      \
    auto lhs##_result_ = (expr);                \
    if (!lhs##_result_.ok()) return lhs##_result_.error(); \
    auto& lhs = lhs##_result_.value()

#define CEN_CHECK_OK(expr)                      \
    do {                                        \
        auto check_result_ = (expr);            \
        if (!check_result_.ok()) return check_result_.error(); \
    } while (0)
