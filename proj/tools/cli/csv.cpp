#include "cli/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace bbsmc::cli {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << csv_field(cells[i]);
  }
  out_ << "\r\n";
}

int CsvTable::column(const std::string& col) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == col) return static_cast<int>(i);
  return -1;
}

int CsvTable::require_column(const std::string& col) const {
  const int i = column(col);
  if (i < 0) throw ConfigError(name + ": missing column '" + col + "'");
  return i;
}

CsvTable read_csv(std::istream& in, const std::string& name) {
  CsvTable table;
  table.name = name;
  std::vector<std::string> record;
  std::string cell;
  bool quoted = false;
  bool any = false;  // current record has content (guards trailing newline)

  auto end_cell = [&] {
    record.push_back(cell);
    cell.clear();
  };
  auto end_record = [&] {
    end_cell();
    if (table.header.empty())
      table.header = record;
    else
      table.rows.push_back(record);
    record.clear();
    any = false;
  };

  char c;
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          cell += '"';
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      any = true;
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        end_cell();
        any = true;
        break;
      case '\r':
        break;  // handled by the following '\n'
      case '\n':
        if (any || !cell.empty() || !record.empty()) end_record();
        break;
      default:
        cell += c;
        any = true;
    }
  }
  if (quoted) throw ConfigError(name + ": unterminated quoted field");
  if (any || !cell.empty() || !record.empty()) end_record();

  for (auto& r : table.rows) {
    if (r.size() > table.header.size())
      throw ConfigError(name + ": row wider than header");
    r.resize(table.header.size());
  }
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_csv(in, path);
}

double cell_number(const CsvTable& table, const std::vector<std::string>& row, int col) {
  const std::string& s = row[static_cast<std::size_t>(col)];
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(table.name + ": column '" + table.header[static_cast<std::size_t>(col)] +
                      "': not a number: '" + s + "'");
  return v;
}

}  // namespace bbsmc::cli
