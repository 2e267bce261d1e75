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
#include <span>
#include <vector>

#include <json.hpp>

#include "epk/dataset.hpp"

namespace epk {

/// Isotropic Gaussian classes. Means shorter than `dim` are zero-padded.
struct BlobSpec {
  std::vector<std::vector<double>> means;
  double std = 1.0;
  std::size_t per_class_count = 1000;
  std::size_t dim = 100;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static BlobSpec from_json(const nlohmann::json& j);

  /// Three classes at (1,4,0,...), (4,1,0,...), (5,5,0,...), std 1, D = 100,
  /// 1000 points per class.
  static BlobSpec toy_default(std::uint64_t seed = 0);

  bool operator==(const BlobSpec&) const = default;
};

/// Class-major samples: all points of class 0, then class 1, and so on.
LabeledDataset gen_blobs(const BlobSpec& spec);

/// Reads an IDX image/label pair (magic 0x00000803 / 0x00000801).
///
/// Pixels are scaled to [0,1]. With downsample_to > 0 the images are
/// average-pooled to downsample_to x downsample_to (the side must divide the
/// original size). With subset_per_class > 0 only the first that many
/// examples of each class, in file order, are kept.
LabeledDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                          std::size_t subset_per_class = 0, std::size_t downsample_to = 0);

/// Average pooling of a square row-major image to side x side.
std::vector<double> downsample_image(std::span<const double> image, std::size_t original_side,
                                     std::size_t side);

/// Writes an IDX pair; used to build fixtures and subsets.
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> label_bytes);

}  // namespace epk
