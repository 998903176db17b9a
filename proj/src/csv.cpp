#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <sstream>

#include "fedpoison/data.hpp"
#include "fedpoison/errors.hpp"

namespace fedpoison::data {

std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  std::size_t i = 0;
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started)
          throw IngestionError("stray quote inside unquoted field on line " + std::to_string(line));
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        ++line;
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (quoted) throw IngestionError("unterminated quoted field at end of input");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

bool parse_number(std::string_view cell, double& out) {
  auto first = cell.find_first_not_of(" \t");
  if (first == std::string_view::npos) return false;
  auto last = cell.find_last_not_of(" \t");
  cell = cell.substr(first, last - first + 1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::size_t RawDataset::column_index(std::string_view name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) {
    std::string available;
    for (const auto& c : columns) available += (available.empty() ? "" : ", ") + c;
    throw IngestionError("column '" + std::string(name) + "' not found; available columns: " + available);
  }
  return static_cast<std::size_t>(it - columns.begin());
}

RawDataset raw_from_records(std::vector<std::vector<std::string>> records, const std::string& label_column) {
  if (records.empty()) throw IngestionError("CSV has no header row");
  RawDataset raw;
  raw.columns = std::move(records.front());
  raw.label_column = label_column;
  raw.column_index(label_column);
  raw.rows.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
  for (std::size_t r = 0; r < raw.rows.size(); ++r)
    if (raw.rows[r].size() != raw.columns.size())
      throw IngestionError("row " + std::to_string(r + 1) + " has " + std::to_string(raw.rows[r].size()) +
                           " cells, header has " + std::to_string(raw.columns.size()));

  raw.kinds.assign(raw.columns.size(), ColumnKind::numeric);
  for (std::size_t c = 0; c < raw.columns.size(); ++c) {
    for (const auto& row : raw.rows) {
      double v = 0.0;
      if (!row[c].empty() && !parse_number(row[c], v)) {
        raw.kinds[c] = ColumnKind::categorical;
        break;
      }
    }
  }
  return raw;
}

RawDataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open CSV file '" + path.string() + "'");
  return raw_from_records(parse_csv(in), label_column);
}

}  // namespace fedpoison::data
