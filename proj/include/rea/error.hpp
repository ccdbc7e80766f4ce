#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rea {

enum class ErrorCode {
  schema_error,
  empty_answer_set,
  config_error,
  transport_error,
  decode_error,
  credential_error,
  missing_placeholder,
  unresolved_placeholder,
  unknown_template,
  invalid_pair,
  cardinality_error,
  parse_error,
  crew_count_error,
  score_parse_error,
  range_error,
  io_error,
  corrupt_pool,
  mixed_kind_error,
  empty_input_error,
  unknown_variant,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::schema_error: return "schema_error";
    case ErrorCode::empty_answer_set: return "empty_answer_set";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::transport_error: return "transport_error";
    case ErrorCode::decode_error: return "decode_error";
    case ErrorCode::credential_error: return "credential_error";
    case ErrorCode::missing_placeholder: return "missing_placeholder";
    case ErrorCode::unresolved_placeholder: return "unresolved_placeholder";
    case ErrorCode::unknown_template: return "unknown_template";
    case ErrorCode::invalid_pair: return "invalid_pair";
    case ErrorCode::cardinality_error: return "cardinality_error";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::crew_count_error: return "crew_count_error";
    case ErrorCode::score_parse_error: return "score_parse_error";
    case ErrorCode::range_error: return "range_error";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::corrupt_pool: return "corrupt_pool";
    case ErrorCode::mixed_kind_error: return "mixed_kind_error";
    case ErrorCode::empty_input_error: return "empty_input_error";
    case ErrorCode::unknown_variant: return "unknown_variant";
  }
  return "unknown";
}

/// Every failure raised by the library. `detail` carries the offending
/// field, placeholder, criterion or index so callers can assert on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail, std::string message = {})
      : std::runtime_error(format(code, detail, message)),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  static std::string format(ErrorCode code, const std::string& detail,
                            const std::string& message) {
    std::string out(to_string(code));
    out += "(" + detail + ")";
    if (!message.empty()) out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::string detail_;
};

/// Coarse error families used for CLI exit codes.
enum class ErrorFamily { input, backend, protocol, io };

constexpr ErrorFamily family_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::schema_error:
    case ErrorCode::empty_answer_set:
    case ErrorCode::config_error:
    case ErrorCode::unknown_variant:
    case ErrorCode::mixed_kind_error:
    case ErrorCode::empty_input_error:
      return ErrorFamily::input;
    case ErrorCode::transport_error:
    case ErrorCode::decode_error:
    case ErrorCode::credential_error:
      return ErrorFamily::backend;
    case ErrorCode::io_error:
    case ErrorCode::corrupt_pool:
      return ErrorFamily::io;
    default:
      return ErrorFamily::protocol;
  }
}

}  // namespace rea
