#include "kilnnet/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kilnnet/error.hpp"

namespace kiln {

std::string format_double(double value) {
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) fail(ErrorKind::numeric, "cannot format value");
  return std::string(buf.data(), end);
}

std::string format_fixed(double value, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << value;
  return os.str();
}

double parse_double(std::string_view text, const std::string& what) {
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty() ||
      !std::isfinite(value)) {
    fail(ErrorKind::validation, what + ": '" + std::string(text) + "' is not a finite number");
  }
  return value;
}

std::int64_t parse_int(std::string_view text, const std::string& what) {
  std::int64_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    fail(ErrorKind::validation, what + ": '" + std::string(text) + "' is not an integer");
  }
  return value;
}

std::vector<std::string> split_fields(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) fail(ErrorKind::io, "cannot read " + path);
  return os.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) fail(ErrorKind::io, "cannot write " + path);
}

CsvTable read_csv(const std::string& path) {
  const std::string text = read_file(path);
  CsvTable table;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool have_header = false;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      fail(ErrorKind::validation, path + ":" + std::to_string(line_no) +
                                      ": CRLF line ending (expected LF)");
    }
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      fail(ErrorKind::validation, path + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(table.header.size()) + " fields, got " +
                                      std::to_string(fields.size()));
    }
    table.rows.push_back({line_no, std::move(fields)});
  }
  if (!have_header) fail(ErrorKind::validation, path + ": empty file, missing header");
  return table;
}

}  // namespace kiln
