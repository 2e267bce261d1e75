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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "epk/data.hpp"
#include "epk/gp.hpp"
#include "epk/model.hpp"
#include "epk/path_kernel.hpp"

namespace epk {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kManifestSchemaVersion = 1;

/// Where a dataset comes from. Relative paths resolve against the
/// directory passed to load().
struct DataSource {
  std::string kind = "blobs";  // blobs | csv | mnist
  BlobSpec blobs = BlobSpec::toy_default();
  std::string path;            // csv
  std::size_t classes = 0;     // csv, 0 infers
  std::string images, labels;  // mnist
  std::size_t per_class = 50;
  std::size_t skip_per_class = 0;
  std::size_t downsample = 14;

  nlohmann::json to_json() const;
  static DataSource from_json(const nlohmann::json& j);
  LabeledDataset load(const std::filesystem::path& base) const;

  bool operator==(const DataSource&) const = default;
};

/// MNIST pair, keeping the examples whose rank within their class lies in
/// [skip, skip + per_class).
LabeledDataset load_mnist_window(const std::filesystem::path& images, const std::filesystem::path& labels,
                                 std::size_t skip, std::size_t per_class, std::size_t downsample);

struct GpConfig {
  bool enabled = false;
  std::string grid = "-2:8:25,-2:8:25";
  std::size_t train_points = 30;  // evenly strided training subset used as conditioning set
  std::size_t integration_steps = 10;
  std::string kernel = "epk";     // epk | ntk0 | ntkN
  std::string targets = "onehot"; // onehot | model
  double jitter = 0.0;            // 0 selects the relative default
  std::size_t mc_samples = 1000;
  std::uint64_t mc_seed = 0;

  nlohmann::json to_json() const;
  static GpConfig from_json(const nlohmann::json& j);
  bool operator==(const GpConfig&) const = default;
};

struct ExperimentConfig {
  ModelSpec model;
  DataSource data;
  std::optional<DataSource> test;
  std::size_t test_points = 100;
  Loss loss = Loss::NLL;
  double epsilon = 0.05;
  std::vector<double> schedule;  // overrides epsilon and steps when non-empty
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> integration_steps = {100};
  Quadrature rule = Quadrature::LeftRiemann;
  std::size_t align_points = 5;
  std::size_t contrib_point = 0;
  std::vector<double> contrib_x;  // explicit query (zero padded) instead of a test point
  std::size_t pathdiag_resolution = 21;
  GpConfig gp;
  int threads = 0;
  std::string output_dir = "out";
  std::string note;

  void validate() const;
  std::vector<double> step_sizes() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  bool operator==(const ExperimentConfig&) const = default;
};

/// Held-out points for a config: the explicit test source, or else a fresh
/// draw (blobs) / the next examples per class (mnist).
LabeledDataset load_test_set(const ExperimentConfig& config, const std::filesystem::path& base);

struct ExperimentResult {
  std::filesystem::path directory;
  nlohmann::json manifest;
};

/// Runs every stage into <output_dir>.partial and renames it on success.
/// On failure the partial directory is removed and the error is rethrown
/// with the stage name prepended. An existing output directory is replaced
/// only if it holds a manifest.json.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& base = ".");

// Artifact writers shared with the command-line tool.

/// point, kernel_0.., predicted
void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionReport>& reports);
/// point, model_0.., kernel_0.., bias_0.., max_abs_err
void write_compare_csv(const std::filesystem::path& path, const std::vector<PredictionReport>& reports);
/// point, step, class, gaps and cumulative gaps
void write_alignment_csv(const std::filesystem::path& path,
                         const std::vector<std::vector<AlignmentRecord>>& records);
/// train_index, label, distance, contrib_0..
void write_contrib_csv(const std::filesystem::path& path, const ContributionReport& report,
                       const LabeledDataset& data, std::span<const double> x);
/// t, accuracy, mean_loss, l2_norm, grad_dot_direction, grad_dot_0..
void write_pathdiag_csv(const std::filesystem::path& path, const std::vector<PathDiagnosticRecord>& records);
/// point, x0, x1, mean_0.., variance_0.., total_variance, mc_std_0..
void write_field_csv(const std::filesystem::path& path, const PosteriorField& field, const PointSet& grid);
/// row_point, row_class, col_point, col_class, value
void write_gram_csv(const std::filesystem::path& path, const GramMatrix& g);

}  // namespace epk
