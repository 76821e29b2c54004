#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace foulseg::csv {

using Row = std::vector<std::string>;

/// Header-indexed table. Quoting follows RFC 4180 for fields containing commas, quotes or newlines.
struct Table {
  Row header;
  std::vector<Row> rows;

  /// Column index by name; throws ConfigError when absent.
  std::size_t column(std::string_view name) const;
  const std::string& get(const Row& row, std::string_view name) const { return row[column(name)]; }
};

Table read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Table& table);

std::string escape(std::string_view field);
/// Shortest round-trip decimal for doubles; stable across runs.
std::string format_number(double v);

}  // namespace foulseg::csv
