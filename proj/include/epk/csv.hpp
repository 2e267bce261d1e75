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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace epk {

/// Shortest decimal form that parses back to the same double.
std::string format_number(double v);
double parse_number(std::string_view text);

/// Minimal comma-separated writer. Cells never contain commas or quotes.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  CsvWriter& add(double v);
  CsvWriter& add(std::size_t v);
  CsvWriter& add(int v);
  CsvWriter& add(const std::string& v);
  void end_row();
  void close();

 private:
  void separator();

  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t columns_ = 0;
  std::size_t cells_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws FormatError naming the missing column.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace epk
