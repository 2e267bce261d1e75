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

#include "epk/dataset.hpp"
#include "epk/model.hpp"

namespace epk {

/// Every weight state visited by full-batch forward-Euler training.
///
/// checkpoints s and s+1 satisfy
///   w_{s+1} = w_s - step_sizes[s] * batch_loss_gradient(w_s)
/// bit for bit, and the final layer of w_0 is all zeros so the initial model
/// output is the same for every input.
struct Trajectory {
  ModelSpec spec;
  Loss loss = Loss::NLL;
  std::vector<double> step_sizes;  // N entries
  std::vector<double> weights;     // (N+1) * W, checkpoint-major
  Fingerprint dataset_fingerprint{};
  std::uint64_t seed = 0;
  std::size_t num_samples = 0;  // M of the training set

  std::size_t num_steps() const { return step_sizes.size(); }
  std::size_t weight_count() const { return spec.weight_count(); }
  std::size_t num_classes() const { return spec.output_dim(); }
  std::span<const double> checkpoint(std::size_t s) const;
  std::span<const double> initial() const { return checkpoint(0); }
  std::span<const double> final() const { return checkpoint(num_steps()); }

  /// Throws ConfigError unless the dataset is the one this path was trained on.
  void check_dataset(const LabeledDataset& data) const;

  bool operator==(const Trajectory&) const = default;
};

/// Hidden layers: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn layer by layer,
/// weights row-major then biases, from Pcg32(seed). Final layer: all zeros.
std::vector<double> init_model(const ModelSpec& spec, std::uint64_t seed);

struct TrainOptions {
  Loss loss = Loss::NLL;
  std::uint64_t seed = 0;
  /// Permits eps_s = 0; only meaningful for tests of the degenerate path.
  bool allow_zero_steps = false;
};

/// One forward-Euler step per entry of step_sizes (N >= 1).
/// Throws NumericalError naming the step if a gradient or weight goes non-finite.
Trajectory train_full_batch(const ModelSpec& spec, const LabeledDataset& data,
                            std::span<const double> step_sizes, const TrainOptions& options);

/// Constant step size convenience overload.
Trajectory train_full_batch(const ModelSpec& spec, const LabeledDataset& data, double epsilon,
                            std::size_t steps, const TrainOptions& options);

/// A trajectory with no steps, holding only w_0.
Trajectory initial_trajectory(const ModelSpec& spec, const LabeledDataset& data,
                              std::span<const double> w0, std::uint64_t seed, Loss loss = Loss::NLL);

/// Largest |recomputed w_{s+1} - stored w_{s+1}| over all steps (0 when the
/// trajectory replays bit-exactly).
double replay_error(const Trajectory& traj, const LabeledDataset& data);

/// Binary format: "EPK1", u32 version (1), u32 header length, header JSON,
/// N little-endian f64 step sizes, then (N+1)*W little-endian f64 weights.
void save_trajectory(const Trajectory& traj, const std::filesystem::path& path);
Trajectory load_trajectory(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_trajectory(const Trajectory& traj);
Trajectory deserialize_trajectory(std::span<const std::uint8_t> bytes);

}  // namespace epk
