#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace diffcal::csv {

using Row = std::vector<std::string>;

// RFC 4180: fields separated by commas, optionally double-quoted; quoted
// fields may contain commas, quotes ("" escape) and line breaks.
std::vector<Row> read(std::istream& in);
std::vector<Row> read_file(const std::filesystem::path& path);

void write_row(std::ostream& out, const Row& row);

// Shortest decimal representation that round-trips through strtod.
std::string format_double(double value);

double parse_double(std::string_view text);
long long parse_int(std::string_view text);

// Maps header names to column indices and throws on missing columns.
class Header {
 public:
  Header(const Row& header, std::vector<std::string> required);
  std::size_t operator[](std::string_view name) const;

 private:
  std::vector<std::string> names_;
};

}  // namespace diffcal::csv
