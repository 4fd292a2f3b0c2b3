#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace seqmatch::io {

/// Delimited text with a header row. Fields may be double-quoted; a doubled
/// quote inside a quoted field is a literal quote. Blank lines are skipped.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
};

/// Throws std::invalid_argument on ragged rows or an unterminated quote.
CsvTable read_csv(std::istream& in, char delimiter = ',');
CsvTable read_csv_file(const std::filesystem::path& path, char delimiter = ',');

/// Splits one physical line; exposed for tests.
std::vector<std::string> split_csv_line(std::string_view line, char delimiter = ',');

}  // namespace seqmatch::io
