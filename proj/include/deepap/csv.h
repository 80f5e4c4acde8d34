#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace deepap::csv {

std::vector<std::string> split_line(const std::string& line);
bool is_missing(const std::string& cell);
// Strict finite number; throws DataError mentioning `where`.
double parse_number(const std::string& cell, const std::string& where);
// Shortest text that parses back to the same double.
std::string number_text(double v);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  // Throws DataError naming `file` when absent.
  std::size_t column(const std::string& name, const std::string& file) const;
  std::vector<std::string> with_prefix(const std::string& prefix) const;
};

Table read(const std::filesystem::path& path);

}  // namespace deepap::csv
