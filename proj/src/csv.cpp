#include "cdrloc/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "cdrloc/error.hpp"

namespace cdrloc::csv {

LineReader::LineReader(const std::string& path, std::size_t buffer_bytes)
    : in_(path, std::ios::binary), buf_(buffer_bytes) {
  if (!in_) throw Error(ErrorCode::Io, "cannot open " + path);
}

bool LineReader::refill() {
  if (eof_) return false;
  in_.read(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  end_ = static_cast<std::size_t>(in_.gcount());
  begin_ = 0;
  if (end_ == 0) eof_ = true;
  return end_ != 0;
}

bool LineReader::next(std::string_view& line) {
  carry_.clear();
  bool have_carry = false;
  for (;;) {
    if (begin_ >= end_ && !refill()) {
      if (!have_carry) return false;
      break;
    }
    const char* start = buf_.data() + begin_;
    const void* nl = std::memchr(start, '\n', end_ - begin_);
    if (nl != nullptr) {
      const std::size_t len = static_cast<const char*>(nl) - start;
      begin_ += len + 1;
      if (have_carry) {
        carry_.append(start, len);
        break;
      }
      line = std::string_view(start, len);
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      return true;
    }
    carry_.append(start, end_ - begin_);
    have_carry = true;
    begin_ = end_;
  }
  line = carry_;
  ++line_no_;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

void split(std::string_view line, char sep, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string out(buf, static_cast<std::size_t>(n));
  if (out.find_first_not_of("-0.") == std::string::npos && out.front() == '-') out.erase(0, 1);
  return out;
}

Writer::Writer(const std::string& path, std::string_view header) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw Error(ErrorCode::Io, "cannot write " + path);
  pending_.reserve(1 << 20);
  pending_.append(header);
  pending_.push_back('\n');
}

Writer::~Writer() {
  try {
    close();
  } catch (...) {
  }
}

void Writer::row(std::string_view line) {
  pending_.append(line);
  pending_.push_back('\n');
  if (pending_.size() >= (1 << 20)) {
    out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
    pending_.clear();
  }
}

void Writer::close() {
  if (!out_.is_open()) return;
  out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
  pending_.clear();
  out_.close();
  if (out_.fail()) throw Error(ErrorCode::Io, "failed writing " + path_);
}

}  // namespace cdrloc::csv
