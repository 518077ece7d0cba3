#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rkt::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string source;

  std::size_t column(std::string_view name) const;
};

// Comma-separated, header row required. Rows must match the header width.
Table read(const std::filesystem::path& path);

double to_double(std::string_view field, const Table& t, std::size_t row);
std::int64_t to_int(std::string_view field, const Table& t, std::size_t row);

std::string format_double(double v);

}  // namespace rkt::csv
