#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace cpdmom {

using Date = std::chrono::sys_days;

// Parses YYYY-MM-DD. Throws ParseError on anything else.
Date parse_date(std::string_view text);
std::string format_date(Date d);

Date make_date(int year, unsigned month, unsigned day);
int year_of(Date d);

// Next Monday-Friday day strictly after d.
Date next_business_day(Date d);

}  // namespace cpdmom
