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

#include "epk/data.hpp"

#include <fstream>
#include <iterator>

#include "epk/errors.hpp"
#include "epk/rng.hpp"

namespace epk {

void BlobSpec::validate() const {
  if (means.empty()) throw ConfigError("blob spec needs at least one class mean");
  if (dim == 0) throw ConfigError("blob dimension must be >= 1");
  for (const auto& m : means)
    if (m.size() > dim) throw ConfigError("blob mean longer than the data dimension");
  if (!(std >= 0.0)) throw ConfigError("blob std must be >= 0");
  if (per_class_count == 0) throw ConfigError("per_class_count must be >= 1");
}

nlohmann::json BlobSpec::to_json() const {
  return {{"means", means},
          {"std", std},
          {"per_class_count", per_class_count},
          {"dim", dim},
          {"seed", seed}};
}

BlobSpec BlobSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("blob spec must be a JSON object");
  BlobSpec spec;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "means") {
        spec.means = value.get<std::vector<std::vector<double>>>();
      } else if (key == "std") {
        spec.std = value.get<double>();
      } else if (key == "per_class_count") {
        spec.per_class_count = value.get<std::size_t>();
      } else if (key == "dim") {
        spec.dim = value.get<std::size_t>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("unknown blob spec key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("blob spec key '" + key + "': " + e.what());
    }
  }
  spec.validate();
  return spec;
}

BlobSpec BlobSpec::toy_default(std::uint64_t seed) {
  BlobSpec spec;
  spec.means = {{1.0, 4.0}, {4.0, 1.0}, {5.0, 5.0}};
  spec.std = 1.0;
  spec.per_class_count = 1000;
  spec.dim = 100;
  spec.seed = seed;
  return spec;
}

LabeledDataset gen_blobs(const BlobSpec& spec) {
  spec.validate();
  Pcg32 rng(spec.seed);
  const std::size_t K = spec.means.size();
  std::vector<double> x;
  std::vector<std::uint32_t> y;
  x.reserve(K * spec.per_class_count * spec.dim);
  for (std::size_t c = 0; c < K; ++c) {
    for (std::size_t n = 0; n < spec.per_class_count; ++n) {
      for (std::size_t d = 0; d < spec.dim; ++d) {
        const double mean = d < spec.means[c].size() ? spec.means[c][d] : 0.0;
        x.push_back(mean + spec.std * rng.normal());
      }
      y.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return {std::move(x), spec.dim, std::move(y), K};
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size())
    throw FormatError("'" + path.string() + "' truncated at offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

std::vector<double> downsample_image(std::span<const double> image, std::size_t original_side,
                                     std::size_t side) {
  if (side == 0 || original_side % side != 0)
    throw ConfigError("downsample side " + std::to_string(side) + " does not divide " +
                      std::to_string(original_side));
  if (image.size() != original_side * original_side) throw ConfigError("image is not square");
  const std::size_t factor = original_side / side;
  std::vector<double> out(side * side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      double total = 0.0;
      for (std::size_t dr = 0; dr < factor; ++dr)
        for (std::size_t dc = 0; dc < factor; ++dc)
          total += image[(r * factor + dr) * original_side + c * factor + dc];
      out[r * side + c] = total / static_cast<double>(factor * factor);
    }
  return out;
}

LabeledDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                          std::size_t subset_per_class, std::size_t downsample_to) {
  const auto image_bytes = read_file(images);
  const auto label_bytes = read_file(labels);
  if (read_be32(image_bytes, 0, images) != 0x00000803)
    throw FormatError("'" + images.string() + "': bad magic at offset 0 (expected 0x00000803)");
  if (read_be32(label_bytes, 0, labels) != 0x00000801)
    throw FormatError("'" + labels.string() + "': bad magic at offset 0 (expected 0x00000801)");
  const std::size_t count = read_be32(image_bytes, 4, images);
  const std::size_t rows = read_be32(image_bytes, 8, images);
  const std::size_t cols = read_be32(image_bytes, 12, images);
  const std::size_t label_count = read_be32(label_bytes, 4, labels);
  if (count != label_count)
    throw FormatError("image count " + std::to_string(count) + " differs from label count " +
                      std::to_string(label_count));
  if (rows == 0 || cols == 0) throw FormatError("'" + images.string() + "': zero image dimension");
  const std::size_t pixels = rows * cols;
  if (image_bytes.size() < 16 + count * pixels)
    throw FormatError("'" + images.string() + "' truncated at offset " +
                      std::to_string(image_bytes.size()));
  if (label_bytes.size() < 8 + count)
    throw FormatError("'" + labels.string() + "' truncated at offset " +
                      std::to_string(label_bytes.size()));
  if (downsample_to && rows != cols) throw FormatError("downsampling needs square images");
  const std::size_t side = downsample_to ? downsample_to : 0;
  if (side && rows % side != 0)
    throw ConfigError("downsample side " + std::to_string(side) + " does not divide " +
                      std::to_string(rows));
  const std::size_t dim = side ? side * side : pixels;
  const std::size_t factor = side ? rows / side : 1;
  const double scale = 255.0 * static_cast<double>(factor * factor);

  constexpr std::size_t kClasses = 10;
  std::vector<std::size_t> taken(kClasses, 0);
  std::vector<double> x;
  std::vector<std::uint32_t> y;
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint8_t label = label_bytes[8 + n];
    if (label >= kClasses)
      throw FormatError("'" + labels.string() + "': label " + std::to_string(label) + " at offset " +
                        std::to_string(8 + n));
    if (subset_per_class && taken[label] >= subset_per_class) continue;
    ++taken[label];
    const std::uint8_t* img = image_bytes.data() + 16 + n * pixels;
    if (!side) {
      for (std::size_t p = 0; p < pixels; ++p) x.push_back(img[p] / 255.0);
    } else {
      // Pool the raw bytes so a constant image stays exactly constant.
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
          unsigned total = 0;
          for (std::size_t dr = 0; dr < factor; ++dr)
            for (std::size_t dc = 0; dc < factor; ++dc)
              total += img[(r * factor + dr) * cols + c * factor + dc];
          x.push_back(static_cast<double>(total) / scale);
        }
    }
    y.push_back(label);
  }
  if (y.empty()) throw FormatError("'" + images.string() + "' contains no images");
  return {std::move(x), dim, std::move(y), kClasses};
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               std::span<const std::uint8_t> pixels, std::size_t rows, std::size_t cols,
               std::span<const std::uint8_t> label_bytes) {
  if (pixels.size() != label_bytes.size() * rows * cols)
    throw ConfigError("pixel buffer does not match label count and image size");
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw IoError("cannot write IDX files");
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(label_bytes.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(label_bytes.size()));
  lab.write(reinterpret_cast<const char*>(label_bytes.data()),
            static_cast<std::streamsize>(label_bytes.size()));
  if (!img || !lab) throw IoError("failed writing IDX files");
}

}  // namespace epk
