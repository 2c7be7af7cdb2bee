#pragma once

#include <string>
#include <vector>

namespace uad {

/// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

/// Strict parse of a whole field; throws std::invalid_argument.
double parse_real(const std::string &s);
std::size_t parse_count(const std::string &s);

std::vector<std::string> split_csv_line(const std::string &line);
std::vector<std::string> split_lines(const std::string &text);

} // namespace uad
