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

#include "epk/gp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "epk/csv.hpp"
#include "epk/errors.hpp"
#include "epk/parallel.hpp"
#include "epk/rng.hpp"

namespace epk {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix stacked_jacobians(const Network& net, std::span<const double> w, const PointSet& points) {
  const std::size_t K = net.output_dim();
  RowMatrix out(static_cast<Eigen::Index>(points.size() * K), static_cast<Eigen::Index>(net.weight_count()));
  parallel_for(points.size(), [&](std::size_t p) {
    const Jacobian jac = per_sample_jacobian(net, w, points.point(p));
    std::copy(jac.values.begin(), jac.values.end(), out.data() + p * jac.values.size());
  });
  return out;
}

void check_gram_inputs(const Trajectory& traj, const LabeledDataset& data, const PointSet& points) {
  traj.check_dataset(data);
  if (points.size() > 0 && points.dim != traj.spec.input_dim())
    throw ConfigError("points have dimension " + std::to_string(points.dim) + ", model expects " +
                      std::to_string(traj.spec.input_dim()));
}

}  // namespace

KernelBlock GramMatrix::block(std::size_t i, std::size_t j) const {
  KernelBlock b(classes);
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t c = 0; c < classes; ++c)
      b(k, c) = flat(static_cast<Eigen::Index>(i * classes + k), static_cast<Eigen::Index>(j * classes + c));
  b.test_id = i;
  b.train_id = j;
  return b;
}

GramMatrix gram(const BlockKernel& kernel, const PointSet& a, const PointSet& b, std::size_t classes) {
  GramMatrix g{a.size(), b.size(), classes,
               Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.size() * classes),
                                     static_cast<Eigen::Index>(b.size() * classes))};
  std::vector<std::string> failures(a.size() * b.size());
  parallel_for(a.size() * b.size(), [&](std::size_t pair) {
    const std::size_t i = pair / b.size();
    const std::size_t j = pair % b.size();
    const KernelBlock block = kernel(a.point(i), b.point(j));
    if (block.classes != classes) {
      failures[pair] = "kernel block (" + std::to_string(i) + ", " + std::to_string(j) + ") has wrong size";
      return;
    }
    for (std::size_t k = 0; k < classes; ++k)
      for (std::size_t c = 0; c < classes; ++c) {
        if (!std::isfinite(block(k, c)))
          failures[pair] = "non-finite kernel block at (" + std::to_string(i) + ", " + std::to_string(j) + ")";
        g.flat(static_cast<Eigen::Index>(i * classes + k), static_cast<Eigen::Index>(j * classes + c)) = block(k, c);
      }
  });
  for (const auto& f : failures)
    if (!f.empty()) throw NumericalError(f);
  return g;
}

std::string to_string(GramKernel kind) {
  switch (kind) {
    case GramKernel::Epk: return "epk";
    case GramKernel::Ntk0: return "ntk0";
    case GramKernel::NtkN: return "ntkN";
  }
  return "epk";
}

GramKernel gram_kernel_from_string(const std::string& name) {
  if (name == "epk") return GramKernel::Epk;
  if (name == "ntk0") return GramKernel::Ntk0;
  if (name == "ntkN") return GramKernel::NtkN;
  throw ConfigError("unknown Gram kernel '" + name + "' (expected epk|ntk0|ntkN)");
}

GramMatrix path_gram(const Trajectory& traj, const LabeledDataset& data, const PointSet& a,
                     const PointSet& b, const GramOptions& options) {
  check_gram_inputs(traj, data, a);
  check_gram_inputs(traj, data, b);
  const std::size_t T = options.path.integration_steps;
  if (T == 0) throw ConfigError("integration steps must be >= 1");
  const Network net(traj.spec);
  const std::size_t K = traj.num_classes();
  const bool same = &a == &b;
  GramMatrix g{a.size(), b.size(), K,
               Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(a.size() * K),
                                     static_cast<Eigen::Index>(b.size() * K))};

  auto product = [&](std::span<const double> w, Eigen::MatrixXd& target) {
    const RowMatrix ja = stacked_jacobians(net, w, a);
    if (same) {
      target.noalias() += ja * ja.transpose();
    } else {
      const RowMatrix jb = stacked_jacobians(net, w, b);
      target.noalias() += ja * jb.transpose();
    }
  };

  if (options.kind == GramKernel::Ntk0 || options.kind == GramKernel::NtkN) {
    product(options.kind == GramKernel::Ntk0 ? traj.initial() : traj.final(), g.flat);
  } else {
    const auto M = static_cast<double>(data.size());
    Eigen::MatrixXd step(g.flat.rows(), g.flat.cols());
    for (std::size_t s = 0; s < traj.num_steps(); ++s) {
      step.setZero();
      for (std::size_t tau = 0; tau < T; ++tau) {
        const auto w = interpolate_weights(traj.checkpoint(s), traj.checkpoint(s + 1),
                                           quadrature_node(options.path.rule, tau, T));
        product(w, step);
      }
      g.flat += (traj.step_sizes[s] / (M * static_cast<double>(T))) * step;
    }
  }
  if (!g.flat.allFinite()) throw NumericalError("non-finite entry in Gram matrix");
  return g;
}

std::vector<double> path_gram_diagonal(const Trajectory& traj, const LabeledDataset& data,
                                       const PointSet& points, const GramOptions& options) {
  check_gram_inputs(traj, data, points);
  const std::size_t T = options.path.integration_steps;
  if (T == 0) throw ConfigError("integration steps must be >= 1");
  const Network net(traj.spec);
  const std::size_t K = traj.num_classes();
  const auto M = static_cast<double>(data.size());
  std::vector<double> out(points.size() * K * K, 0.0);

  parallel_for(points.size(), [&](std::size_t p) {
    double* dst = out.data() + p * K * K;
    const auto x = points.point(p);
    auto add_block = [&](std::span<const double> w, double scale, double* acc) {
      const Jacobian jac = per_sample_jacobian(net, w, x);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < K; ++c) {
          double dot = 0.0;
          for (std::size_t j = 0; j < jac.cols; ++j) dot += jac(k, j) * jac(c, j);
          acc[k * K + c] += scale * dot;
        }
    };
    if (options.kind != GramKernel::Epk) {
      add_block(options.kind == GramKernel::Ntk0 ? traj.initial() : traj.final(), 1.0, dst);
      return;
    }
    std::vector<double> step(K * K);
    for (std::size_t s = 0; s < traj.num_steps(); ++s) {
      std::fill(step.begin(), step.end(), 0.0);
      for (std::size_t tau = 0; tau < T; ++tau)
        add_block(interpolate_weights(traj.checkpoint(s), traj.checkpoint(s + 1),
                                      quadrature_node(options.path.rule, tau, T)),
                  1.0, step.data());
      const double scale = traj.step_sizes[s] / (M * static_cast<double>(T));
      for (std::size_t e = 0; e < K * K; ++e) dst[e] += scale * step[e];
    }
  });
  return out;
}

PsdReport check_psd(const Eigen::MatrixXd& g, double tol) {
  if (g.rows() != g.cols()) throw ConfigError("PSD check needs a square matrix");
  PsdReport report;
  if (g.size() == 0) {
    report.pass = true;
    return report;
  }
  const double scale = g.cwiseAbs().maxCoeff();
  report.symmetric_defect = scale > 0.0 ? (g - g.transpose()).cwiseAbs().maxCoeff() / scale : 0.0;
  const Eigen::MatrixXd sym = 0.5 * (g + g.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
  report.min_eig = solver.eigenvalues().minCoeff();
  report.max_eig = solver.eigenvalues().maxCoeff();
  report.pass = report.symmetric_defect <= tol && report.min_eig >= -tol * std::abs(report.max_eig);
  return report;
}

PsdReport check_psd(const GramMatrix& g, double tol) { return check_psd(g.flat, tol); }

PosteriorField kriging(const GramMatrix& tt, const GramMatrix& qt, std::span<const double> qq_diag,
                       std::span<const double> targets, std::span<const double> prior,
                       const KrigingOptions& options) {
  const std::size_t n = tt.rows;
  const std::size_t G = qt.rows;
  const std::size_t K = tt.classes;
  if (tt.cols != n) throw ConfigError("train Gram must be square");
  if (qt.cols != n || qt.classes != K) throw ConfigError("query x train Gram does not match the train Gram");
  if (qq_diag.size() != G * K * K) throw ConfigError("query diagonal blocks have the wrong size");
  if (targets.size() != n * K) throw ConfigError("Kriging targets must be [n x K]");
  if (!prior.empty() && prior.size() != K) throw ConfigError("prior mean must have K entries");
  if (n == 0) throw InputError("Kriging needs at least one training point");

  PosteriorField field;
  field.points = G;
  field.classes = K;
  field.mean.assign(G * K, 0.0);
  field.variance.assign(G * K, 0.0);
  field.total_variance.assign(G, 0.0);
  field.jitter.assign(K, 0.0);
  field.min_raw_variance = std::numeric_limits<double>::infinity();

  const auto N = static_cast<Eigen::Index>(n);
  for (std::size_t k = 0; k < K; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const auto Ki = static_cast<Eigen::Index>(K);
    Eigen::MatrixXd A(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j) A(i, j) = tt.flat(i * Ki + kk, j * Ki + kk);
    const double mean_diag = A.diagonal().mean();
    if (!(mean_diag > 0.0)) throw NumericalError("train Gram for class " + std::to_string(k) + " has no positive diagonal");
    double jitter = options.jitter > 0.0 ? options.jitter : 1e-8 * mean_diag;
    const double max_jitter = std::max(jitter, options.max_relative_jitter * mean_diag);
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (;;) {
      llt.compute(A + jitter * Eigen::MatrixXd::Identity(N, N));
      if (llt.info() == Eigen::Success) break;
      jitter *= 2.0;
      if (jitter > max_jitter) {
        std::ostringstream msg;
        msg << "Kriging system for class " << k << " is singular up to jitter " << max_jitter;
        throw NumericalError(msg.str());
      }
    }
    field.jitter[k] = jitter;

    const double p = prior.empty() ? 0.0 : prior[k];
    Eigen::VectorXd r(N);
    for (Eigen::Index i = 0; i < N; ++i) r(i) = targets[static_cast<std::size_t>(i) * K + k] - p;
    const Eigen::VectorXd alpha = llt.solve(r);

    Eigen::MatrixXd B(static_cast<Eigen::Index>(G), N);
    for (Eigen::Index q = 0; q < static_cast<Eigen::Index>(G); ++q)
      for (Eigen::Index j = 0; j < N; ++j) B(q, j) = qt.flat(q * Ki + kk, j * Ki + kk);
    const Eigen::VectorXd mean = B * alpha;
    const Eigen::MatrixXd V = llt.matrixL().solve(B.transpose());

    double floor_scale = 1.0;
    for (std::size_t q = 0; q < G; ++q) floor_scale = std::max(floor_scale, std::abs(qq_diag[(q * K + k) * K + k]));
    for (std::size_t q = 0; q < G; ++q) {
      const double c = qq_diag[(q * K + k) * K + k];
      const double var = c - V.col(static_cast<Eigen::Index>(q)).squaredNorm();
      field.min_raw_variance = std::min(field.min_raw_variance, var);
      if (!std::isfinite(var) || var < -1e-10 * floor_scale) {
        std::ostringstream msg;
        msg << "negative posterior variance " << var << " at point " << q << ", class " << k;
        throw NumericalError(msg.str());
      }
      field.mean[q * K + k] = p + mean(static_cast<Eigen::Index>(q));
      field.variance[q * K + k] = std::max(var, 0.0);
    }
  }
  for (std::size_t q = 0; q < G; ++q)
    for (std::size_t k = 0; k < K; ++k) field.total_variance[q] += field.variance[q * K + k];
  return field;
}

void mc_prob_std(PosteriorField& field, std::size_t samples, std::uint64_t seed) {
  if (samples < 2) throw InputError("Monte-Carlo std needs at least 2 samples");
  const std::size_t K = field.classes;
  field.mc_prob_std.assign(field.points * K, 0.0);
  parallel_for(field.points, [&](std::size_t p) {
    Pcg32 rng(seed, p);
    std::vector<double> sd(K), z(K), mean(K, 0.0), m2(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) sd[k] = std::sqrt(field.variance[p * K + k]);
    for (std::size_t n = 1; n <= samples; ++n) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        z[k] = field.mean[p * K + k] + sd[k] * rng.normal();
        top = std::max(top, z[k]);
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        z[k] = std::exp(z[k] - top);
        norm += z[k];
      }
      for (std::size_t k = 0; k < K; ++k) {
        const double prob = z[k] / norm;
        const double delta = prob - mean[k];
        mean[k] += delta / static_cast<double>(n);
        m2[k] += delta * (prob - mean[k]);
      }
    }
    for (std::size_t k = 0; k < K; ++k)
      field.mc_prob_std[p * K + k] = std::sqrt(m2[k] / static_cast<double>(samples - 1));
  });
}

PointSet parse_grid(const std::string& spec, std::size_t dim) {
  if (dim < 2) throw ConfigError("grid needs at least two input dimensions");
  struct Axis {
    double lo, hi;
    std::size_t n;
  };
  std::vector<Axis> axes;
  std::stringstream in(spec);
  std::string part;
  while (std::getline(in, part, ',')) {
    std::vector<std::string> fields;
    std::stringstream ps(part);
    std::string f;
    while (std::getline(ps, f, ':')) fields.push_back(f);
    if (fields.size() != 3) throw ConfigError("bad grid axis '" + part + "' (expected lo:hi:n)");
    double count = 0.0;
    Axis axis{};
    try {
      axis.lo = parse_number(fields[0]);
      axis.hi = parse_number(fields[1]);
      count = parse_number(fields[2]);
    } catch (const Error&) {
      throw ConfigError("bad grid axis '" + part + "'");
    }
    if (!std::isfinite(axis.lo) || !std::isfinite(axis.hi) || count < 1 || count != std::floor(count))
      throw ConfigError("bad grid axis '" + part + "'");
    axis.n = static_cast<std::size_t>(count);
    axes.push_back(axis);
  }
  if (axes.size() != 2) throw ConfigError("grid spec needs exactly two axes: x0:x1:n,y0:y1:n");

  auto node = [](const Axis& a, std::size_t i) {
    if (a.n == 1) return a.lo;
    return a.lo + (a.hi - a.lo) * static_cast<double>(i) / static_cast<double>(a.n - 1);
  };
  PointSet grid;
  grid.dim = dim;
  grid.values.assign(axes[0].n * axes[1].n * dim, 0.0);
  std::size_t p = 0;
  for (std::size_t iy = 0; iy < axes[1].n; ++iy)
    for (std::size_t ix = 0; ix < axes[0].n; ++ix, ++p) {
      grid.values[p * dim] = node(axes[0], ix);
      grid.values[p * dim + 1] = node(axes[1], iy);
    }
  return grid;
}

}  // namespace epk
