#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace rkt {

// Naive local timestamps, seconds since 1970-01-01T00:00:00.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerHour = 3600;

// Accepts "YYYY-MM-DDTHH:MM[:SS]" (a space may replace the 'T').
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

int hour_of_day(Timestamp ts);
// Monday = 0 ... Sunday = 6.
int day_of_week(Timestamp ts);

}  // namespace rkt
