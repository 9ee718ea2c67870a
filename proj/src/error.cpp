#include "cdrloc/error.hpp"

namespace cdrloc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::RowParseError: return "RowParseError";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::NonPositivePower: return "NonPositivePower";
    case ErrorCode::EmptyStream: return "EmptyStream";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownCell: return "UnknownCell";
    case ErrorCode::NoGps: return "NoGps";
    case ErrorCode::NoLabeledData: return "NoLabeledData";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::ZeroTotalWeight: return "ZeroTotalWeight";
    case ErrorCode::NoLabeledUsers: return "NoLabeledUsers";
    case ErrorCode::NoUsers: return "NoUsers";
    case ErrorCode::ZeroExpectedCell: return "ZeroExpectedCell";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorCode code, const std::string& what, std::size_t line) {
  std::string msg(to_string(code));
  if (line != 0) msg += " (line " + std::to_string(line) + ")";
  if (!what.empty()) msg += ": " + what;
  return msg;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& what, std::size_t line)
    : std::runtime_error(format_message(code, what, line)), code_(code), detail_(what), line_(line) {}

}  // namespace cdrloc
