#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <nlohmann/json.hpp>

namespace polyglot {

// Every failure raised by the library carries one of these codes. The service
// maps each code to exactly one HTTP status and wire string.
enum class Errc {
  MalformedDocument,
  SchemaViolation,
  InvalidFragment,
  UnknownNode,
  SyntaxError,
  UnknownVariable,
  TypeMismatch,
  UnknownBuiltin,
  UnrefinedFragment,
  CapabilityMismatch,
  SessionNotActive,
  KindMismatch,
  ShapeMismatch,
  UncoverableGoal,
  PrerequisiteCycle,
  ChainTooLong,
  DepthExceeded,
  ResultInvalid,
  NotAbsorbing,
  UnsupportedModel,
  NotFound,
  VersionConflict,
  ConcurrentSubmission,
  BadRequest,
  Unauthorized,
  IoError,
};

inline constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MalformedDocument: return "MALFORMED_DOCUMENT";
    case Errc::SchemaViolation: return "SCHEMA_VIOLATION";
    case Errc::InvalidFragment: return "INVALID_FRAGMENT";
    case Errc::UnknownNode: return "UNKNOWN_NODE";
    case Errc::SyntaxError: return "SYNTAX_ERROR";
    case Errc::UnknownVariable: return "UNKNOWN_VARIABLE";
    case Errc::TypeMismatch: return "TYPE_MISMATCH";
    case Errc::UnknownBuiltin: return "UNKNOWN_BUILTIN";
    case Errc::UnrefinedFragment: return "UNREFINED_FRAGMENT";
    case Errc::CapabilityMismatch: return "CAPABILITY_MISMATCH";
    case Errc::SessionNotActive: return "SESSION_NOT_ACTIVE";
    case Errc::KindMismatch: return "KIND_MISMATCH";
    case Errc::ShapeMismatch: return "SHAPE_MISMATCH";
    case Errc::UncoverableGoal: return "UNCOVERABLE_GOAL";
    case Errc::PrerequisiteCycle: return "PREREQUISITE_CYCLE";
    case Errc::ChainTooLong: return "CHAIN_TOO_LONG";
    case Errc::DepthExceeded: return "DEPTH_EXCEEDED";
    case Errc::ResultInvalid: return "RESULT_INVALID";
    case Errc::NotAbsorbing: return "NOT_ABSORBING";
    case Errc::UnsupportedModel: return "UNSUPPORTED_MODEL";
    case Errc::NotFound: return "NOT_FOUND";
    case Errc::VersionConflict: return "VERSION_CONFLICT";
    case Errc::ConcurrentSubmission: return "CONCURRENT_SUBMISSION";
    case Errc::BadRequest: return "BAD_REQUEST";
    case Errc::Unauthorized: return "UNAUTHORIZED";
    case Errc::IoError: return "IO_ERROR";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  Errc code() const noexcept { return code_; }
  std::string_view code_name() const noexcept { return errc_name(code_); }
  const nlohmann::json& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  nlohmann::json detail_;
};

}  // namespace polyglot
