#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kiln {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
std::string format_fixed(double value, int digits);

/// Whole-field parses; `what` names the field in the validation error.
double parse_double(std::string_view text, const std::string& what);
std::int64_t parse_int(std::string_view text, const std::string& what);

std::vector<std::string> split_fields(std::string_view line, char sep = ',');

struct CsvRow {
  /// 1-based line number in the file (the header is line 1).
  std::size_t line = 0;
  std::vector<std::string> fields;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
};

/// Reads a comma-separated file with a header line. Rows must have as many
/// fields as the header; blank trailing lines are ignored.
CsvTable read_csv(const std::string& path);

std::string read_file(const std::string& path);
/// Writes the whole content or throws an I/O error naming the path.
void write_file(const std::string& path, std::string_view content);

}  // namespace kiln
