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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epk/dataset.hpp"
#include "epk/path_kernel.hpp"
#include "epk/trainer.hpp"

namespace epk {

/// Block-structured Gram matrix. Flat row (i*K + k) pairs point A_i with
/// output k; flat column (j*K + c) pairs B_j with output c.
struct GramMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t classes = 0;
  Eigen::MatrixXd flat;

  KernelBlock block(std::size_t i, std::size_t j) const;
};

using BlockKernel = std::function<KernelBlock(std::span<const double>, std::span<const double>)>;

/// blocks[i][j] = kernel(A_i, B_j). Throws NumericalError naming (i, j) on
/// a non-finite entry.
GramMatrix gram(const BlockKernel& kernel, const PointSet& a, const PointSet& b, std::size_t classes);

enum class GramKernel {
  Epk,   // sum_s (eps_s/M) (1/T) sum_tau J(w_s(t_tau), x) J(w_s(t_tau), x')^T
  Ntk0,  // J(w_0, x) J(w_0, x')^T
  NtkN,  // J(w_N, x) J(w_N, x')^T
};

std::string to_string(GramKernel kind);
GramKernel gram_kernel_from_string(const std::string& name);  // epk|ntk0|ntkN

struct GramOptions {
  GramKernel kind = GramKernel::Epk;
  PathKernelOptions path;
};

/// Gram matrix of the aggregated kernel with both points in the test role.
/// Passing the same PointSet object for a and b computes one stacked product.
GramMatrix path_gram(const Trajectory& traj, const LabeledDataset& data, const PointSet& a,
                     const PointSet& b, const GramOptions& options);

/// Diagonal blocks K(x, x) only, as [n x K x K].
std::vector<double> path_gram_diagonal(const Trajectory& traj, const LabeledDataset& data,
                                       const PointSet& points, const GramOptions& options);

struct PsdReport {
  double min_eig = 0.0;
  double max_eig = 0.0;
  double symmetric_defect = 0.0;  // max|G - G^T| / max|G|
  bool pass = false;
};

/// Eigensolve of the symmetrized flat view; symmetric and PSD within tol.
PsdReport check_psd(const Eigen::MatrixXd& g, double tol = 1e-8);
PsdReport check_psd(const GramMatrix& g, double tol = 1e-8);

struct KrigingOptions {
  /// Absolute starting jitter; <= 0 selects 1e-8 * mean diagonal.
  double jitter = 0.0;
  /// Jitter is doubled on factorization failure up to this multiple of the mean diagonal.
  double max_relative_jitter = 1e-2;
};

struct PosteriorField {
  std::size_t points = 0;
  std::size_t classes = 0;
  std::vector<double> mean;            // [G x K]
  std::vector<double> variance;        // [G x K], clamped at 0
  std::vector<double> total_variance;  // [G]
  std::vector<double> mc_prob_std;     // [G x K], filled by mc_prob_std()
  std::vector<double> jitter;          // per class, as used
  double min_raw_variance = 0.0;       // before clamping
};

/// Per-class scalar Kriging on the diagonal block entries:
///   mean_k = prior_k + G_qt,k G_tt,k^-1 (Y_k - prior_k)
///   var_k  = G_qq,k - G_qt,k G_tt,k^-1 G_tq,k
/// `qq_diag` holds [G x K x K] diagonal blocks (path_gram_diagonal layout),
/// `targets` [n x K], `prior` [K] (empty means zero).
PosteriorField kriging(const GramMatrix& tt, const GramMatrix& qt, std::span<const double> qq_diag,
                       std::span<const double> targets, std::span<const double> prior,
                       const KrigingOptions& options = {});

/// Per-class std of softmax probabilities over S independent Gaussian logit
/// draws per point (N(mean_k, variance_k)). Point p uses Pcg32(seed, p).
void mc_prob_std(PosteriorField& field, std::size_t samples, std::uint64_t seed);

/// "x0:x1:n,y0:y1:n" over the first two input dimensions, the rest 0.
/// Points are ordered with x varying fastest.
PointSet parse_grid(const std::string& spec, std::size_t dim);

}  // namespace epk
