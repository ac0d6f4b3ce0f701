#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bbsmc/errors.hpp"

namespace bbsmc::cli {

// Configuration / input errors: bad config values, malformed input files,
// missing columns. The launcher maps these to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Shortest decimal string that parses back to exactly v. Infinities become
// "inf"/"-inf", NaN becomes "nan".
std::string format_number(double v);

// Quotes the field if it contains a comma, quote, or line break.
std::string csv_field(const std::string& s);

// Writes rows with CRLF terminators and minimal quoting.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}
  void row(const std::vector<std::string>& cells);

 private:
  std::ostream& out_;
};

struct CsvTable {
  std::string name;  // for error messages
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index, or -1 when absent.
  int column(const std::string& col) const;
  // Column index; throws ConfigError naming the file and column when absent.
  int require_column(const std::string& col) const;
};

// Quote-aware reader; accepts LF and CRLF line endings. The first record is
// the header. Rows are padded with empty cells to the header width.
CsvTable read_csv(std::istream& in, const std::string& name);
CsvTable read_csv_file(const std::string& path);

// Parses a cell as double; throws ConfigError naming the table and column.
double cell_number(const CsvTable& table, const std::vector<std::string>& row, int col);

}  // namespace bbsmc::cli
