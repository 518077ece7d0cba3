#include "rkt/timeutil.hpp"

#include <charconv>
#include <cstdio>

#include "rkt/errors.hpp"

namespace rkt {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

int read_int(std::string_view s, std::size_t pos, std::size_t len, std::string_view whole) {
  int v = 0;
  if (pos + len > s.size()) throw DataError("malformed timestamp: '" + std::string(whole) + "'");
  auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
  if (ec != std::errc() || p != s.data() + pos + len) {
    throw DataError("malformed timestamp: '" + std::string(whole) + "'");
  }
  return v;
}

constexpr unsigned kDaysInMonth[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  const std::string_view s = text;
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    throw DataError("malformed timestamp: '" + std::string(text) + "'");
  }
  const int y = read_int(s, 0, 4, text);
  const int mo = read_int(s, 5, 2, text);
  const int d = read_int(s, 8, 2, text);
  const int h = read_int(s, 11, 2, text);
  const int mi = read_int(s, 14, 2, text);
  int sec = 0;
  if (s.size() > 16) {
    if (s[16] != ':' || s.size() != 19) throw DataError("malformed timestamp: '" + std::string(text) + "'");
    sec = read_int(s, 17, 2, text);
  }
  if (mo < 1 || mo > 12 || d < 1 || static_cast<unsigned>(d) > kDaysInMonth[mo - 1] || h > 23 || mi > 59 || sec > 59) {
    throw DataError("timestamp out of range: '" + std::string(text) + "'");
  }
  const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return days * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(Timestamp ts) {
  std::int64_t days = ts / 86400;
  std::int64_t rem = ts % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  std::int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld", static_cast<long long>(y), m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

int hour_of_day(Timestamp ts) {
  std::int64_t rem = ts % 86400;
  if (rem < 0) rem += 86400;
  return static_cast<int>(rem / 3600);
}

int day_of_week(Timestamp ts) {
  std::int64_t days = ts / 86400;
  if (ts % 86400 < 0) days -= 1;
  // 1970-01-01 was a Thursday (index 3 when Monday = 0).
  std::int64_t w = (days + 3) % 7;
  if (w < 0) w += 7;
  return static_cast<int>(w);
}

}  // namespace rkt
