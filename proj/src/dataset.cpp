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

#include "epk/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include <openssl/evp.h>

#include "epk/csv.hpp"
#include "epk/errors.hpp"

namespace epk {

namespace {

void append_u64(std::vector<std::uint8_t>& bytes, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void append_u32(std::vector<std::uint8_t>& bytes, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

Fingerprint sha256(const std::vector<std::uint8_t>& bytes) {
  Fingerprint out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw Error("SHA-256 digest failed");
  return out;
}

}  // namespace

std::string to_hex(const Fingerprint& fp) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(64);
  for (auto byte : fp) {
    hex.push_back(kDigits[byte >> 4]);
    hex.push_back(kDigits[byte & 15]);
  }
  return hex;
}

Fingerprint fingerprint_from_hex(const std::string& hex) {
  if (hex.size() != 64) throw FormatError("fingerprint must be 64 hex digits");
  const auto nibble = [&](char c) -> std::uint8_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
    throw FormatError("invalid hex digit in fingerprint");
  };
  Fingerprint fp{};
  for (std::size_t b = 0; b < 32; ++b)
    fp[b] = static_cast<std::uint8_t>((nibble(hex[2 * b]) << 4) | nibble(hex[2 * b + 1]));
  return fp;
}

LabeledDataset::LabeledDataset(std::vector<double> inputs, std::size_t dim,
                               std::vector<std::uint32_t> labels, std::size_t num_classes)
    : inputs_(std::move(inputs)), labels_(std::move(labels)), dim_(dim), classes_(num_classes) {
  if (dim_ == 0) throw ConfigError("dataset dimension must be >= 1");
  if (classes_ == 0) throw ConfigError("dataset needs at least one class");
  if (inputs_.size() != labels_.size() * dim_)
    throw ConfigError("dataset has " + std::to_string(inputs_.size()) + " values for " +
                      std::to_string(labels_.size()) + " points of dimension " + std::to_string(dim_));
  onehot_.assign(labels_.size() * classes_, 0.0);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= classes_)
      throw InputError("label " + std::to_string(labels_[i]) + " at row " + std::to_string(i) +
                       " is outside [0, " + std::to_string(classes_) + ")");
    onehot_[i * classes_ + labels_[i]] = 1.0;
  }

  std::vector<std::uint8_t> bytes;
  bytes.reserve(32 + inputs_.size() * 8 + labels_.size() * 4);
  for (char c : std::string_view("EPKDATA1")) bytes.push_back(static_cast<std::uint8_t>(c));
  append_u64(bytes, labels_.size());
  append_u64(bytes, dim_);
  append_u64(bytes, classes_);
  for (double v : inputs_) append_u64(bytes, std::bit_cast<std::uint64_t>(v));
  for (auto label : labels_) append_u32(bytes, label);
  fingerprint_ = sha256(bytes);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<double> x;
  std::vector<std::uint32_t> y;
  x.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    if (i >= size()) throw InputError("subset index " + std::to_string(i) + " out of range");
    const auto row = input(i);
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(labels_[i]);
  }
  return {std::move(x), dim_, std::move(y), classes_};
}

LabeledDataset LabeledDataset::concat(const LabeledDataset& other) const {
  if (other.dim_ != dim_ || other.classes_ != classes_)
    throw ConfigError("cannot concatenate datasets of different shape");
  std::vector<double> x = inputs_;
  x.insert(x.end(), other.inputs_.begin(), other.inputs_.end());
  std::vector<std::uint32_t> y = labels_;
  y.insert(y.end(), other.labels_.begin(), other.labels_.end());
  return {std::move(x), dim_, std::move(y), classes_};
}

void save_dataset_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  std::vector<std::string> header;
  for (std::size_t d = 0; d < data.dim(); ++d) header.push_back("x" + std::to_string(d));
  header.push_back("label");
  CsvWriter out(path, header);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.input(i)) out.add(v);
    out.add(static_cast<std::size_t>(data.label(i)));
    out.end_row();
  }
  out.close();
}

namespace {

std::size_t feature_columns(const CsvTable& table, const std::filesystem::path& path) {
  std::size_t dim = 0;
  while (dim < table.header.size() && table.header[dim] == "x" + std::to_string(dim)) ++dim;
  if (dim == 0) throw FormatError("'" + path.string() + "' has no x0.. feature columns");
  return dim;
}

}  // namespace

LabeledDataset load_dataset_csv(const std::filesystem::path& path, std::size_t num_classes) {
  const CsvTable table = read_csv(path);
  const std::size_t dim = feature_columns(table, path);
  const std::size_t label_col = table.column("label");
  std::vector<double> x;
  std::vector<std::uint32_t> y;
  x.reserve(table.rows.size() * dim);
  std::uint32_t max_label = 0;
  for (const auto& row : table.rows) {
    for (std::size_t d = 0; d < dim; ++d) x.push_back(parse_number(row[d]));
    const double label = parse_number(row[label_col]);
    if (label < 0 || label != static_cast<double>(static_cast<std::uint32_t>(label)))
      throw FormatError("label '" + row[label_col] + "' is not a class index");
    y.push_back(static_cast<std::uint32_t>(label));
    max_label = std::max(max_label, y.back());
  }
  if (y.empty()) throw FormatError("'" + path.string() + "' has no rows");
  const std::size_t classes = num_classes ? num_classes : max_label + 1;
  return {std::move(x), dim, std::move(y), classes};
}

PointSet load_points_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  PointSet points;
  points.dim = feature_columns(table, path);
  for (const auto& row : table.rows)
    for (std::size_t d = 0; d < points.dim; ++d) points.values.push_back(parse_number(row[d]));
  return points;
}

PointSet points_of(const LabeledDataset& data) { return {data.inputs(), data.dim()}; }

}  // namespace epk
