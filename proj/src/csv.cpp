#include "csv.hpp"

#include <charconv>
#include <fstream>

#include "rkt/errors.hpp"

namespace rkt::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(source + ": missing column '" + std::string(name) + "'");
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table t;
  t.source = path.filename().string();
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    std::string_view v = line;
    if (!have_header && v.starts_with("\xEF\xBB\xBF")) v.remove_prefix(3);
    if (trim(v).empty()) continue;
    auto fields = split_line(v);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(t.source + ": row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw DataError(t.source + ": missing header row");
  return t;
}

double to_double(std::string_view field, const Table& t, std::size_t row) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || p != field.data() + field.size()) {
    throw DataError(t.source + ": row " + std::to_string(row + 1) + ": '" + std::string(field) + "' is not a number");
  }
  return v;
}

std::int64_t to_int(std::string_view field, const Table& t, std::size_t row) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || p != field.data() + field.size()) {
    throw DataError(t.source + ": row " + std::to_string(row + 1) + ": '" + std::string(field) + "' is not an integer");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace rkt::csv
