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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace epk {

using Fingerprint = std::array<std::uint8_t, 32>;

std::string to_hex(const Fingerprint& fp);
Fingerprint fingerprint_from_hex(const std::string& hex);

/// Inputs X [M x D] and one-hot labels Y [M x K], row-major.
///
/// The fingerprint is the SHA-256 of a canonical byte serialization
/// ("EPKDATA1", u64 M, D, K, X as little-endian f64, labels as u32) and is
/// therefore a pure function of the values and labels.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::vector<double> inputs, std::size_t dim, std::vector<std::uint32_t> labels,
                 std::size_t num_classes);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return classes_; }

  std::span<const double> input(std::size_t i) const { return {inputs_.data() + i * dim_, dim_}; }
  std::span<const double> onehot(std::size_t i) const {
    return {onehot_.data() + i * classes_, classes_};
  }
  std::uint32_t label(std::size_t i) const { return labels_[i]; }

  const std::vector<double>& inputs() const { return inputs_; }
  const std::vector<double>& onehots() const { return onehot_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }
  const Fingerprint& fingerprint() const { return fingerprint_; }

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  LabeledDataset concat(const LabeledDataset& other) const;

 private:
  std::vector<double> inputs_;
  std::vector<double> onehot_;
  std::vector<std::uint32_t> labels_;
  std::size_t dim_ = 0;
  std::size_t classes_ = 0;
  Fingerprint fingerprint_{};
};

/// Header `x0,...,x{D-1},label`; values written in shortest round-trip form.
void save_dataset_csv(const LabeledDataset& data, const std::filesystem::path& path);

/// num_classes = 0 infers K as max label + 1.
LabeledDataset load_dataset_csv(const std::filesystem::path& path, std::size_t num_classes = 0);

/// Unlabeled point set [n x D]; a trailing `label` column, if present, is ignored.
struct PointSet {
  std::vector<double> values;
  std::size_t dim = 0;

  std::size_t size() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

PointSet load_points_csv(const std::filesystem::path& path);
PointSet points_of(const LabeledDataset& data);

}  // namespace epk
