#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdrloc::csv {

/// Buffered line reader. Lines are returned without the trailing newline or
/// carriage return; views stay valid until the next call.
class LineReader {
 public:
  /// Throws Error(Io) if the file cannot be opened.
  explicit LineReader(const std::string& path, std::size_t buffer_bytes = 1 << 20);

  bool next(std::string_view& line);
  std::size_t line_number() const { return line_no_; }

 private:
  bool refill();

  std::ifstream in_;
  std::vector<char> buf_;
  std::size_t begin_ = 0;
  std::size_t end_ = 0;
  bool eof_ = false;
  std::string carry_;
  std::size_t line_no_ = 0;
};

/// Splits on `sep` without quote handling; fields are trimmed of spaces.
void split(std::string_view line, char sep, std::vector<std::string_view>& out);

std::string_view trim(std::string_view s);

std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// Fixed-point formatting, locale independent.
std::string fixed(double v, int decimals);

/// Writes `header` then rows; throws Error(Io) on failure.
class Writer {
 public:
  Writer(const std::string& path, std::string_view header);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void row(std::string_view line);
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  std::string pending_;
};

}  // namespace cdrloc::csv
