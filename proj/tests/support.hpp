#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdrloc/geo.hpp"
#include "cdrloc/model.hpp"
#include "cdrloc/timeutil.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("cdrloc_test_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline cdrloc::CdrRecord rec(cdrloc::Timestamp ts, std::uint32_t cell) {
  return cdrloc::CdrRecord{ts, cdrloc::CellIndex{cell}, 0};
}

/// 2024-01-01 00:00 UTC, a Monday.
inline constexpr cdrloc::Timestamp kMonday = 1704067200;

}  // namespace testing
