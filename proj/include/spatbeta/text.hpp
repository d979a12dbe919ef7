#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spatbeta {

// Splits one delimited line. Double-quoted fields may contain the
// delimiter; "" inside quotes is an escaped quote.
std::vector<std::string> split_fields(std::string_view line, char delimiter);

std::string_view trim(std::string_view s);

// Empty (after trimming) or a conventional missing marker such as NA.
bool is_missing(std::string_view field);

std::optional<double> parse_double(std::string_view field);

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

// Fixed-precision representation used in human-facing tables.
std::string format_fixed(double value, int digits);

// Reads `key = value` lines; '#' starts a comment. Later keys overwrite
// earlier ones.
std::map<std::string, std::string> read_key_values(std::istream& in);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::vector<std::string> split_list(std::string_view list, char sep = ',');

// Reads one line, dropping a trailing '\r'.
bool read_line(std::istream& in, std::string& line);

}  // namespace spatbeta
