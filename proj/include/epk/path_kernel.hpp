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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epk/dataset.hpp"
#include "epk/exact_sum.hpp"
#include "epk/model.hpp"
#include "epk/trainer.hpp"

namespace epk {

/// Placement of the T integration points on each training step.
enum class Quadrature {
  LeftRiemann,  // t = tau / T, tau = 0..T-1
  Midpoint,     // t = (tau + 1/2) / T
};

std::string to_string(Quadrature rule);
Quadrature quadrature_from_string(const std::string& name);
double quadrature_node(Quadrature rule, std::size_t tau, std::size_t T);

/// Which weight state the test-side gradient is taken at for step s.
enum class TestFeature {
  Path,       // EPK: averaged along w_s(t), t in [0,1)
  StepStart,  // DPK: w_s
  Initial,    // empirical NTK at w_0
  Final,      // empirical NTK at w_N
};

std::string to_string(TestFeature feature);
TestFeature test_feature_from_string(const std::string& name);  // epk|dpk|ntk0|ntkN

struct PathKernelOptions {
  std::size_t integration_steps = 100;  // T
  Quadrature rule = Quadrature::LeftRiemann;
};

/// w_s - t (w_s - w_next), returning w_next exactly at t = 1.
/// Throws InputError for t outside [0,1] or mismatched lengths.
std::vector<double> interpolate_weights(std::span<const double> w_s, std::span<const double> w_next,
                                        double t);

/// Mean test Jacobian over the T quadrature nodes of the segment [w_s, w_next].
///
/// Accumulated as J(t_0) + (1/T) sum_tau (J(t_tau) - J(t_0)), so T = 1 and
/// constant integrands return J(t_0) exactly.
Jacobian averaged_path_jacobian(const Network& net, std::span<const double> w_s,
                                std::span<const double> w_next, std::span<const double> x,
                                const PathKernelOptions& options);

/// [K x K] kernel value; entry (k, c) pairs test output k with train output c.
struct KernelBlock {
  std::size_t classes = 0;
  std::vector<double> values;
  std::optional<std::size_t> step;  // empty for aggregated blocks
  std::size_t test_id = 0;
  std::size_t train_id = 0;

  KernelBlock() = default;
  explicit KernelBlock(std::size_t K) : classes(K), values(K * K, 0.0) {}
  double operator()(std::size_t k, std::size_t c) const { return values[k * classes + c]; }
  double& operator()(std::size_t k, std::size_t c) { return values[k * classes + c]; }
};

/// J_a J_b^T for two Jacobians with the same weight dimension.
KernelBlock jacobian_block(const Jacobian& a, const Jacobian& b);

/// EPK block for step s: averaged test Jacobian at x against the train
/// Jacobian of sample i held fixed at w_s.
KernelBlock epk_step_block(const Trajectory& traj, const LabeledDataset& data, std::size_t s,
                           std::span<const double> x, std::size_t i, const PathKernelOptions& options);

/// Empirical NTK block J(w, x) J(w, x')^T.
KernelBlock ntk_block(const Network& net, std::span<const double> w, std::span<const double> x,
                      std::span<const double> x2);

/// Per-step, per-sample coefficients a_{i,s} = -(eps_s / M) dL/df(f_{w_s}(x_i), y_i).
struct SampleCoefficients {
  std::size_t steps = 0;
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::vector<double> step_scale;  // eps_s / M
  std::vector<double> loss_grads;  // [N][M][K], dL/df at w_s
  /// True iff every sample's loss gradient is the same at every step.
  bool constant_flag = true;
  double max_variation = 0.0;
  std::size_t worst_sample = 0;
  std::size_t worst_step = 0;

  std::span<const double> loss_grad(std::size_t s, std::size_t i) const {
    return {loss_grads.data() + (s * samples + i) * classes, classes};
  }
  std::vector<double> a(std::size_t s, std::size_t i) const;
};

SampleCoefficients sample_coefficients(const Trajectory& traj, const LabeledDataset& data);

/// Model output vs. kernel reconstruction at one test point.
struct PredictionReport {
  std::vector<double> model_logits;
  std::vector<double> kernel_logits;
  std::vector<double> bias;              // f_{w_0}(x)
  std::vector<double> per_step_contrib;  // [N x K]
  std::size_t integration_steps = 0;
  TestFeature feature = TestFeature::Path;
  double max_abs_err = 0.0;

  std::span<const double> step(std::size_t s) const {
    return {per_step_contrib.data() + s * bias.size(), bias.size()};
  }
};

/// Batched kernel prediction (the per-sample ensemble with the loss gradients contracted
/// into the train Jacobians before the test contraction).
///
/// Step s contributes (eps_s/M) F_s(x) sum_i J_i(w_s)^T (-dL/df_i), where F_s
/// is the test feature selected by `feature`. All sums are exact, so the
/// result is the correctly rounded value of b + sum_s sum_i (...) and equals
/// the per-train-point ensemble and the reduced kernel machine bit for bit.
std::vector<PredictionReport> kernel_predict(const Trajectory& traj, const LabeledDataset& data,
                                             const PointSet& points, TestFeature feature,
                                             const PathKernelOptions& options);

PredictionReport epk_predict(const Trajectory& traj, const LabeledDataset& data,
                             std::span<const double> x, const PathKernelOptions& options);

/// EPK with a single left-endpoint node.
PredictionReport dpk_predict(const Trajectory& traj, const LabeledDataset& data,
                             std::span<const double> x);

/// Per-step || (eps_s/M) sum_i J_i^T (-dL/df_i) - (w_{s+1} - w_s) ||_inf.
std::vector<double> step_reconstruction_errors(const Trajectory& traj, const LabeledDataset& data);

/// Single kernel machine b + sum_i alpha_i . K_agg(x, x_i).
///
/// alpha_i = -dL/df_i (step independent); the aggregated kernel carries the
/// step weights, K_agg(x, x_i) = sum_s (eps_s/M) K_EPK(x, x_i, s).
struct KernelMachine {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::vector<double> coefficients;      // [M x K]
  std::vector<double> aggregated_kernel; // [M x K x K]
  std::vector<double> bias;
  std::vector<double> kernel_logits;    // reduced form
  std::vector<double> ensemble_logits;  // per-step, per-sample ensemble form
  std::vector<double> model_logits;

  KernelBlock block(std::size_t i) const;
};

/// Refuses (ReductionRefused) unless the sample coefficients are constant.
std::vector<KernelMachine> reduce_to_kernel_machine(const Trajectory& traj, const LabeledDataset& data,
                                                    const PointSet& points,
                                                    const PathKernelOptions& options);

/// Per-step differences between the EPK increment and the DPK / NTK(w_0) /
/// NTK(w_N) increments, all contracted with the same train-side vectors.
struct AlignmentRecord {
  std::size_t step = 0;
  std::vector<double> epk_dpk_gap;
  std::vector<double> epk_ntk0_gap;
  std::vector<double> epk_ntkN_gap;
  std::vector<double> cum_epk_dpk_gap;
  std::vector<double> cum_epk_ntk0_gap;
  std::vector<double> cum_epk_ntkN_gap;
};

/// Result[p][s] for each point p.
std::vector<std::vector<AlignmentRecord>> alignment_error(const Trajectory& traj,
                                                          const LabeledDataset& data,
                                                          const PointSet& points,
                                                          const PathKernelOptions& options);

struct ContributionReport {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::vector<double> values;  // [M x K]
  std::vector<double> bias;
  std::vector<double> kernel_logits;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * classes, classes}; }
};

/// Total class-resolved kernel mass each training point contributes to the
/// prediction at x (plain double accumulation in fixed order).
ContributionReport kernel_contributions(const Trajectory& traj, const LabeledDataset& data,
                                        std::span<const double> x, const PathKernelOptions& options);

struct PathDiagnosticRecord {
  double t = 0.0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double l2_norm = 0.0;
  double grad_dot_direction = 0.0;         // sum_i <grad f_{y_i}(x_i), u>
  std::vector<double> class_grad_dot;      // sum_i <grad f_k(x_i), u>
};

/// Evaluates the chord w(t) = w_0 + t (w_N - w_0) at R evenly spaced t.
std::vector<PathDiagnosticRecord> weight_path_diagnostic(const Trajectory& traj,
                                                         const LabeledDataset& data,
                                                         std::size_t resolution);

/// Fraction of points whose argmax output matches the label.
double accuracy(const Network& net, std::span<const double> w, const LabeledDataset& data);

}  // namespace epk
