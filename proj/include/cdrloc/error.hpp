#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cdrloc {

enum class ErrorCode {
  MalformedHeader,
  RowParseError,
  DuplicateKey,
  NonPositivePower,
  EmptyStream,
  SingleClassData,
  DimensionMismatch,
  UnknownCell,
  NoGps,
  NoLabeledData,
  NoPositives,
  ZeroTotalWeight,
  NoLabeledUsers,
  NoUsers,
  ZeroExpectedCell,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
/// `line` is the 1-based input line for row-level problems, 0 otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::size_t line = 0);

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }
  /// Message without the code/line prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
  std::size_t line_;
};

}  // namespace cdrloc
