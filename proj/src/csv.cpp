/* Copyright 2026 The epk Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "epk/csv.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "epk/errors.hpp"

namespace epk {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, result.ptr};
}

double parse_number(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == '\t'))
    text.remove_suffix(1);
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  double v = 0.0;
  const char* first = text.data();
  if (!text.empty() && text.front() == '+') ++first;
  const auto result = std::from_chars(first, text.data() + text.size(), v);
  if (result.ec != std::errc() || result.ptr != text.data() + text.size())
    throw FormatError("cannot parse number '" + std::string(text) + "'");
  return v;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), path_(path), columns_(header.size()) {
  if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) out_ << ',';
    out_ << header[c];
  }
  out_ << '\n';
}

void CsvWriter::separator() {
  if (cells_++) out_ << ',';
}

CsvWriter& CsvWriter::add(double v) {
  separator();
  out_ << format_number(v);
  return *this;
}

CsvWriter& CsvWriter::add(std::size_t v) {
  separator();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::add(int v) {
  separator();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::add(const std::string& v) {
  separator();
  out_ << v;
  return *this;
}

void CsvWriter::end_row() {
  if (cells_ != columns_)
    throw FormatError("row has " + std::to_string(cells_) + " cells, header has " +
                      std::to_string(columns_));
  out_ << '\n';
  cells_ = 0;
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw IoError("failed writing '" + path_.string() + "'");
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw FormatError("missing column '" + name + "'");
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path.string() + "' is empty");
  table.header = split(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != table.header.size())
      throw FormatError("'" + path.string() + "' line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(table.header.size()));
    table.rows.push_back(std::move(cells));
  }
  return table;
}

}  // namespace epk
