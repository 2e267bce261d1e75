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

#include "epk/path_kernel.hpp"

#include <algorithm>
#include <cmath>

#include "epk/errors.hpp"
#include "epk/parallel.hpp"

namespace epk {

std::string to_string(Quadrature rule) { return rule == Quadrature::LeftRiemann ? "left" : "midpoint"; }

Quadrature quadrature_from_string(const std::string& name) {
  if (name == "left") return Quadrature::LeftRiemann;
  if (name == "midpoint") return Quadrature::Midpoint;
  throw ConfigError("unknown quadrature rule '" + name + "' (expected left|midpoint)");
}

double quadrature_node(Quadrature rule, std::size_t tau, std::size_t T) {
  const auto n = static_cast<double>(T);
  if (rule == Quadrature::LeftRiemann) return static_cast<double>(tau) / n;
  return (static_cast<double>(tau) + 0.5) / n;
}

std::string to_string(TestFeature feature) {
  switch (feature) {
    case TestFeature::Path: return "epk";
    case TestFeature::StepStart: return "dpk";
    case TestFeature::Initial: return "ntk0";
    case TestFeature::Final: return "ntkN";
  }
  return "epk";
}

TestFeature test_feature_from_string(const std::string& name) {
  if (name == "epk") return TestFeature::Path;
  if (name == "dpk") return TestFeature::StepStart;
  if (name == "ntk0") return TestFeature::Initial;
  if (name == "ntkN") return TestFeature::Final;
  throw ConfigError("unknown kernel method '" + name + "' (expected epk|dpk|ntk0|ntkN)");
}

std::vector<double> interpolate_weights(std::span<const double> w_s, std::span<const double> w_next,
                                        double t) {
  if (w_s.size() != w_next.size()) throw InputError("cannot interpolate weights of different layouts");
  if (!(t >= 0.0 && t <= 1.0)) throw InputError("interpolation parameter must lie in [0, 1]");
  if (t == 1.0) return {w_next.begin(), w_next.end()};
  std::vector<double> out(w_s.size());
  for (std::size_t j = 0; j < w_s.size(); ++j) out[j] = w_s[j] - t * (w_s[j] - w_next[j]);
  return out;
}

Jacobian averaged_path_jacobian(const Network& net, std::span<const double> w_s,
                                std::span<const double> w_next, std::span<const double> x,
                                const PathKernelOptions& options) {
  const std::size_t T = options.integration_steps;
  if (T == 0) throw ConfigError("integration steps must be >= 1");
  const auto w0 = interpolate_weights(w_s, w_next, quadrature_node(options.rule, 0, T));
  Jacobian mean = per_sample_jacobian(net, w0, x);
  if (T == 1) return mean;
  std::vector<double> drift(mean.values.size(), 0.0);
  for (std::size_t tau = 1; tau < T; ++tau) {
    const auto w = interpolate_weights(w_s, w_next, quadrature_node(options.rule, tau, T));
    const Jacobian jac = per_sample_jacobian(net, w, x);
    for (std::size_t j = 0; j < drift.size(); ++j) drift[j] += jac.values[j] - mean.values[j];
  }
  const auto n = static_cast<double>(T);
  for (std::size_t j = 0; j < drift.size(); ++j) mean.values[j] += drift[j] / n;
  return mean;
}

KernelBlock jacobian_block(const Jacobian& a, const Jacobian& b) {
  if (a.cols != b.cols || a.rows != b.rows) throw ConfigError("Jacobian shapes differ");
  KernelBlock block(a.rows);
  for (std::size_t k = 0; k < a.rows; ++k)
    for (std::size_t c = 0; c < b.rows; ++c) block(k, c) = exact_dot(a.row(k), b.row(c));
  return block;
}

namespace {

void check_compatible(const Trajectory& traj, const LabeledDataset& data) {
  traj.check_dataset(data);
  if (data.dim() != traj.spec.input_dim() || data.num_classes() != traj.spec.output_dim())
    throw ConfigError("dataset shape does not match the trajectory's model");
}

void check_points(const Trajectory& traj, const PointSet& points) {
  if (points.size() > 0 && points.dim != traj.spec.input_dim())
    throw ConfigError("query points have dimension " + std::to_string(points.dim) +
                      ", model expects " + std::to_string(traj.spec.input_dim()));
}

double step_scale(const Trajectory& traj, std::size_t s, std::size_t M) {
  return traj.step_sizes[s] / static_cast<double>(M);
}

/// Train-side quantities of one step: alpha_i = -dL/df_i and the exact
/// G_s = sum_i J_i^T alpha_i, stored as one double expansion per weight.
struct TrainSide {
  std::vector<double> alpha;  // [M x K]
  std::vector<double> parts;
  std::vector<std::size_t> offsets;  // W + 1
};

TrainSide build_train_side(const Network& net, std::span<const double> w, const LabeledDataset& data,
                           Loss loss) {
  const std::size_t M = data.size();
  const std::size_t K = net.output_dim();
  const std::size_t W = net.weight_count();
  TrainSide side;
  side.alpha.resize(M * K);

  const std::size_t chunks = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(thread_limit()), M));
  std::vector<std::vector<ExactSum>> partial(chunks, std::vector<ExactSum>(W));
  parallel_for(chunks, [&](std::size_t chunk) {
    auto& acc = partial[chunk];
    std::vector<double> row(W);
    std::vector<double> unit(K, 0.0);
    for (std::size_t i = chunk; i < M; i += chunks) {
      const Tape tape = net.record(w, data.input(i));
      const auto grad = loss_gradient(loss, tape.output, data.onehot(i));
      double* alpha = side.alpha.data() + i * K;
      for (std::size_t c = 0; c < K; ++c) alpha[c] = -grad[c];
      for (std::size_t c = 0; c < K; ++c) {
        if (alpha[c] == 0.0) continue;
        unit[c] = 1.0;
        net.pullback(w, tape, unit, row);
        unit[c] = 0.0;
        if (alpha[c] == 1.0) {
          for (std::size_t j = 0; j < W; ++j) acc[j].add(row[j]);
        } else {
          for (std::size_t j = 0; j < W; ++j) acc[j].add_product(row[j], alpha[c]);
        }
      }
    }
  });
  for (std::size_t chunk = 1; chunk < chunks; ++chunk)
    for (std::size_t j = 0; j < W; ++j) partial[0][j].merge(partial[chunk][j]);

  side.offsets.reserve(W + 1);
  side.offsets.push_back(0);
  for (std::size_t j = 0; j < W; ++j) {
    for (double part : partial[0][j].expansion()) side.parts.push_back(part);
    side.offsets.push_back(side.parts.size());
  }
  return side;
}

/// acc[k] += sum_w scaled[k][w] * G_s[w], exactly.
void contract_exact(const std::vector<double>& scaled, std::size_t K, std::size_t W,
                    const TrainSide& side, std::span<ExactSum> acc) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* f = scaled.data() + k * W;
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t q = side.offsets[j]; q < side.offsets[j + 1]; ++q)
        acc[k].add_product(f[j], side.parts[q]);
  }
}

std::vector<double> scaled_values(const Jacobian& feature, double scale) {
  std::vector<double> out(feature.values.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = scale * feature.values[j];
  return out;
}

Jacobian test_feature(const Network& net, const Trajectory& traj, std::size_t s,
                      std::span<const double> x, TestFeature feature, const PathKernelOptions& options) {
  switch (feature) {
    case TestFeature::Path:
      return averaged_path_jacobian(net, traj.checkpoint(s), traj.checkpoint(s + 1), x, options);
    case TestFeature::StepStart: return per_sample_jacobian(net, traj.checkpoint(s), x);
    case TestFeature::Initial: return per_sample_jacobian(net, traj.initial(), x);
    case TestFeature::Final: return per_sample_jacobian(net, traj.final(), x);
  }
  throw ConfigError("unknown test feature");
}

}  // namespace

KernelBlock epk_step_block(const Trajectory& traj, const LabeledDataset& data, std::size_t s,
                           std::span<const double> x, std::size_t i, const PathKernelOptions& options) {
  check_compatible(traj, data);
  if (s >= traj.num_steps())
    throw InputError("step " + std::to_string(s) + " out of range [0, " +
                     std::to_string(traj.num_steps()) + ")");
  if (i >= data.size()) throw InputError("train index " + std::to_string(i) + " out of range");
  const Network net(traj.spec);
  const Jacobian test = averaged_path_jacobian(net, traj.checkpoint(s), traj.checkpoint(s + 1), x, options);
  const Jacobian train = per_sample_jacobian(net, traj.checkpoint(s), data.input(i));
  KernelBlock block = jacobian_block(test, train);
  block.step = s;
  block.train_id = i;
  return block;
}

KernelBlock ntk_block(const Network& net, std::span<const double> w, std::span<const double> x,
                      std::span<const double> x2) {
  return jacobian_block(per_sample_jacobian(net, w, x), per_sample_jacobian(net, w, x2));
}

std::vector<double> SampleCoefficients::a(std::size_t s, std::size_t i) const {
  const auto g = loss_grad(s, i);
  std::vector<double> out(classes);
  for (std::size_t k = 0; k < classes; ++k) out[k] = -step_scale[s] * g[k];
  return out;
}

SampleCoefficients sample_coefficients(const Trajectory& traj, const LabeledDataset& data) {
  check_compatible(traj, data);
  const Network net(traj.spec);
  SampleCoefficients coeffs;
  coeffs.steps = traj.num_steps();
  coeffs.samples = data.size();
  coeffs.classes = traj.num_classes();
  const std::size_t M = coeffs.samples;
  const std::size_t K = coeffs.classes;
  coeffs.loss_grads.resize(coeffs.steps * M * K);
  for (std::size_t s = 0; s < coeffs.steps; ++s) {
    coeffs.step_scale.push_back(step_scale(traj, s, M));
    parallel_for(M, [&](std::size_t i) {
      std::vector<double> g;
      if (traj.loss == Loss::NLL) {
        g = loss_grad_wrt_output(data.onehot(i), data.onehot(i));
      } else {
        g = loss_gradient(traj.loss, forward(net, traj.checkpoint(s), data.input(i)), data.onehot(i));
      }
      std::copy(g.begin(), g.end(), coeffs.loss_grads.begin() + static_cast<std::ptrdiff_t>((s * M + i) * K));
    });
  }
  for (std::size_t s = 1; s < coeffs.steps; ++s)
    for (std::size_t i = 0; i < M; ++i) {
      const auto now = coeffs.loss_grad(s, i);
      const auto first = coeffs.loss_grad(0, i);
      for (std::size_t k = 0; k < K; ++k) {
        const double delta = std::abs(now[k] - first[k]);
        if (delta > coeffs.max_variation) {
          coeffs.max_variation = delta;
          coeffs.worst_sample = i;
          coeffs.worst_step = s;
        }
      }
    }
  coeffs.constant_flag = coeffs.max_variation == 0.0;
  return coeffs;
}

std::vector<PredictionReport> kernel_predict(const Trajectory& traj, const LabeledDataset& data,
                                             const PointSet& points, TestFeature feature,
                                             const PathKernelOptions& options) {
  check_compatible(traj, data);
  check_points(traj, points);
  if (options.integration_steps == 0) throw ConfigError("integration steps must be >= 1");
  const Network net(traj.spec);
  const std::size_t N = traj.num_steps();
  const std::size_t K = traj.num_classes();
  const std::size_t W = traj.weight_count();
  const std::size_t M = data.size();
  const std::size_t P = points.size();

  std::vector<PredictionReport> reports(P);
  std::vector<ExactSum> totals(P * K);
  std::vector<Jacobian> fixed(P);
  parallel_for(P, [&](std::size_t p) {
    auto& r = reports[p];
    r.bias = forward(net, traj.initial(), points.point(p));
    r.model_logits = forward(net, traj.final(), points.point(p));
    r.per_step_contrib.assign(N * K, 0.0);
    r.integration_steps = feature == TestFeature::Path ? options.integration_steps : 1;
    r.feature = feature;
    for (std::size_t k = 0; k < K; ++k) totals[p * K + k].add(r.bias[k]);
    if (N > 0 && (feature == TestFeature::Initial || feature == TestFeature::Final))
      fixed[p] = test_feature(net, traj, 0, points.point(p), feature, options);
  });

  for (std::size_t s = 0; s < N; ++s) {
    const TrainSide side = build_train_side(net, traj.checkpoint(s), data, traj.loss);
    const double scale = step_scale(traj, s, M);
    parallel_for(P, [&](std::size_t p) {
      const bool is_fixed = feature == TestFeature::Initial || feature == TestFeature::Final;
      const Jacobian f = is_fixed ? fixed[p] : test_feature(net, traj, s, points.point(p), feature, options);
      const auto scaled = scaled_values(f, scale);
      std::vector<ExactSum> step_acc(K);
      contract_exact(scaled, K, W, side, step_acc);
      for (std::size_t k = 0; k < K; ++k) {
        reports[p].per_step_contrib[s * K + k] = step_acc[k].value();
        totals[p * K + k].merge(step_acc[k]);
      }
    });
  }

  for (std::size_t p = 0; p < P; ++p) {
    auto& r = reports[p];
    r.kernel_logits.resize(K);
    r.max_abs_err = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      r.kernel_logits[k] = totals[p * K + k].value();
      r.max_abs_err = std::max(r.max_abs_err, std::abs(r.model_logits[k] - r.kernel_logits[k]));
    }
  }
  return reports;
}

PredictionReport epk_predict(const Trajectory& traj, const LabeledDataset& data,
                             std::span<const double> x, const PathKernelOptions& options) {
  const PointSet one{{x.begin(), x.end()}, x.size()};
  return kernel_predict(traj, data, one, TestFeature::Path, options).front();
}

PredictionReport dpk_predict(const Trajectory& traj, const LabeledDataset& data,
                             std::span<const double> x) {
  return epk_predict(traj, data, x, PathKernelOptions{1, Quadrature::LeftRiemann});
}

std::vector<double> step_reconstruction_errors(const Trajectory& traj, const LabeledDataset& data) {
  check_compatible(traj, data);
  const Network net(traj.spec);
  const std::size_t W = traj.weight_count();
  std::vector<double> errors;
  for (std::size_t s = 0; s < traj.num_steps(); ++s) {
    const TrainSide side = build_train_side(net, traj.checkpoint(s), data, traj.loss);
    const double scale = step_scale(traj, s, data.size());
    const auto now = traj.checkpoint(s);
    const auto next = traj.checkpoint(s + 1);
    double worst = 0.0;
    for (std::size_t j = 0; j < W; ++j) {
      ExactSum delta;
      for (std::size_t q = side.offsets[j]; q < side.offsets[j + 1]; ++q)
        delta.add_product(side.parts[q], scale);
      worst = std::max(worst, std::abs(delta.value() - (next[j] - now[j])));
    }
    errors.push_back(worst);
  }
  return errors;
}

KernelBlock KernelMachine::block(std::size_t i) const {
  KernelBlock b(classes);
  std::copy_n(aggregated_kernel.begin() + static_cast<std::ptrdiff_t>(i * classes * classes),
              classes * classes, b.values.begin());
  b.train_id = i;
  return b;
}

std::vector<KernelMachine> reduce_to_kernel_machine(const Trajectory& traj, const LabeledDataset& data,
                                                    const PointSet& points,
                                                    const PathKernelOptions& options) {
  check_compatible(traj, data);
  check_points(traj, points);
  const SampleCoefficients coeffs = sample_coefficients(traj, data);
  if (!coeffs.constant_flag)
    throw ReductionRefused(
        "sample coefficients are not constant over training: dL/df of sample " +
        std::to_string(coeffs.worst_sample) + " changes by " + std::to_string(coeffs.max_variation) +
        " between step 0 and step " + std::to_string(coeffs.worst_step) +
        " (the loss gradient depends on the model output, so only the per-step ensemble is exact)");

  const Network net(traj.spec);
  const std::size_t N = traj.num_steps();
  const std::size_t K = traj.num_classes();
  const std::size_t W = traj.weight_count();
  const std::size_t M = data.size();
  const std::size_t P = points.size();

  std::vector<KernelMachine> machines(P);
  std::vector<ExactSum> aggregated(P * M * K * K);
  std::vector<ExactSum> ensemble(P * K);
  for (std::size_t p = 0; p < P; ++p) {
    auto& km = machines[p];
    km.samples = M;
    km.classes = K;
    km.bias = forward(net, traj.initial(), points.point(p));
    km.model_logits = forward(net, traj.final(), points.point(p));
    for (std::size_t k = 0; k < K; ++k) ensemble[p * K + k].add(km.bias[k]);
    km.coefficients.resize(M * K);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) km.coefficients[i * K + k] = -coeffs.loss_grad(0, i)[k];
  }

  for (std::size_t s = 0; s < N; ++s) {
    const double scale = step_scale(traj, s, M);
    std::vector<std::vector<double>> scaled(P);
    parallel_for(P, [&](std::size_t p) {
      scaled[p] = scaled_values(test_feature(net, traj, s, points.point(p), TestFeature::Path, options), scale);
    });
    for (std::size_t i = 0; i < M; ++i) {
      const Jacobian train = per_sample_jacobian(net, traj.checkpoint(s), data.input(i));
      const auto g = coeffs.loss_grad(s, i);
      parallel_for(P, [&](std::size_t p) {
        for (std::size_t k = 0; k < K; ++k) {
          const double* f = scaled[p].data() + k * W;
          for (std::size_t c = 0; c < K; ++c) {
            ExactSum block;
            const auto row = train.row(c);
            for (std::size_t j = 0; j < W; ++j) block.add_product(f[j], row[j]);
            aggregated[((p * M + i) * K + k) * K + c].merge(block);
            ensemble[p * K + k].add_scaled(block, -g[c]);
          }
        }
      });
    }
  }

  for (std::size_t p = 0; p < P; ++p) {
    auto& km = machines[p];
    km.aggregated_kernel.resize(M * K * K);
    km.kernel_logits.resize(K);
    km.ensemble_logits.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      ExactSum reduced;
      reduced.add(km.bias[k]);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t c = 0; c < K; ++c) {
          const ExactSum& agg = aggregated[((p * M + i) * K + k) * K + c];
          km.aggregated_kernel[(i * K + k) * K + c] = agg.value();
          reduced.add_scaled(agg, km.coefficients[i * K + c]);
        }
      km.kernel_logits[k] = reduced.value();
      km.ensemble_logits[k] = ensemble[p * K + k].value();
    }
  }
  return machines;
}

std::vector<std::vector<AlignmentRecord>> alignment_error(const Trajectory& traj,
                                                          const LabeledDataset& data,
                                                          const PointSet& points,
                                                          const PathKernelOptions& options) {
  check_compatible(traj, data);
  check_points(traj, points);
  const Network net(traj.spec);
  const std::size_t N = traj.num_steps();
  const std::size_t K = traj.num_classes();
  const std::size_t W = traj.weight_count();
  const std::size_t M = data.size();
  const std::size_t P = points.size();

  std::vector<std::vector<AlignmentRecord>> out(P, std::vector<AlignmentRecord>(N));
  std::vector<Jacobian> ntk0(P), ntkN(P);
  // cumulative[p][baseline][k]
  std::vector<ExactSum> cumulative(P * 3 * K);
  parallel_for(P, [&](std::size_t p) {
    ntk0[p] = per_sample_jacobian(net, traj.initial(), points.point(p));
    ntkN[p] = per_sample_jacobian(net, traj.final(), points.point(p));
  });

  for (std::size_t s = 0; s < N; ++s) {
    const TrainSide side = build_train_side(net, traj.checkpoint(s), data, traj.loss);
    const double scale = step_scale(traj, s, M);
    parallel_for(P, [&](std::size_t p) {
      const auto x = points.point(p);
      const Jacobian path = averaged_path_jacobian(net, traj.checkpoint(s), traj.checkpoint(s + 1), x, options);
      const Jacobian start = per_sample_jacobian(net, traj.checkpoint(s), x);
      const Jacobian* features[4] = {&path, &start, &ntk0[p], &ntkN[p]};
      std::vector<std::vector<ExactSum>> inc(4, std::vector<ExactSum>(K));
      for (int f = 0; f < 4; ++f) contract_exact(scaled_values(*features[f], scale), K, W, side, inc[f]);

      AlignmentRecord& rec = out[p][s];
      rec.step = s;
      std::vector<double>* gaps[3] = {&rec.epk_dpk_gap, &rec.epk_ntk0_gap, &rec.epk_ntkN_gap};
      std::vector<double>* cums[3] = {&rec.cum_epk_dpk_gap, &rec.cum_epk_ntk0_gap, &rec.cum_epk_ntkN_gap};
      for (int b = 0; b < 3; ++b) {
        gaps[b]->resize(K);
        cums[b]->resize(K);
        for (std::size_t k = 0; k < K; ++k) {
          ExactSum gap = inc[0][k];
          gap.merge_negated(inc[b + 1][k]);
          (*gaps[b])[k] = gap.value();
          ExactSum& cum = cumulative[(p * 3 + b) * K + k];
          cum.merge(gap);
          (*cums[b])[k] = cum.value();
        }
      }
    });
  }
  return out;
}

ContributionReport kernel_contributions(const Trajectory& traj, const LabeledDataset& data,
                                        std::span<const double> x, const PathKernelOptions& options) {
  check_compatible(traj, data);
  const Network net(traj.spec);
  net.check_input(x);
  const std::size_t N = traj.num_steps();
  const std::size_t K = traj.num_classes();
  const std::size_t W = traj.weight_count();
  const std::size_t M = data.size();

  ContributionReport report;
  report.samples = M;
  report.classes = K;
  report.values.assign(M * K, 0.0);
  report.bias = forward(net, traj.initial(), x);

  for (std::size_t s = 0; s < N; ++s) {
    const auto w = traj.checkpoint(s);
    const auto scaled = scaled_values(
        averaged_path_jacobian(net, w, traj.checkpoint(s + 1), x, options), step_scale(traj, s, M));
    parallel_for(M, [&](std::size_t i) {
      const Tape tape = net.record(w, data.input(i));
      const auto grad = loss_gradient(traj.loss, tape.output, data.onehot(i));
      std::vector<double> row(W);
      std::vector<double> unit(K, 0.0);
      std::vector<double> step(K, 0.0);
      for (std::size_t c = 0; c < K; ++c) {
        const double alpha = -grad[c];
        if (alpha == 0.0) continue;
        unit[c] = 1.0;
        net.pullback(w, tape, unit, row);
        unit[c] = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const double* f = scaled.data() + k * W;
          double dot = 0.0;
          for (std::size_t j = 0; j < W; ++j) dot += f[j] * row[j];
          step[k] += alpha * dot;
        }
      }
      for (std::size_t k = 0; k < K; ++k) report.values[i * K + k] += step[k];
    });
  }

  report.kernel_logits.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    ExactSum total;
    total.add(report.bias[k]);
    for (std::size_t i = 0; i < M; ++i) total.add(report.values[i * K + k]);
    report.kernel_logits[k] = total.value();
  }
  return report;
}

double accuracy(const Network& net, std::span<const double> w, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (argmax(forward(net, w, data.input(i))) == data.label(i)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<PathDiagnosticRecord> weight_path_diagnostic(const Trajectory& traj,
                                                         const LabeledDataset& data,
                                                         std::size_t resolution) {
  check_compatible(traj, data);
  if (resolution < 2) throw InputError("path resolution must be >= 2");
  const Network net(traj.spec);
  const std::size_t K = traj.num_classes();
  const std::size_t W = traj.weight_count();
  const std::size_t M = data.size();
  const auto w0 = traj.initial();
  const auto wN = traj.final();

  std::vector<double> direction(W);
  double norm = 0.0;
  for (std::size_t j = 0; j < W; ++j) {
    direction[j] = wN[j] - w0[j];
    norm += direction[j] * direction[j];
  }
  norm = std::sqrt(norm);
  for (double& d : direction) d = norm > 0.0 ? d / norm : 0.0;

  std::vector<PathDiagnosticRecord> records(resolution);
  for (std::size_t r = 0; r < resolution; ++r) {
    auto& rec = records[r];
    rec.t = static_cast<double>(r) / static_cast<double>(resolution - 1);
    const auto w = interpolate_weights(w0, wN, rec.t);
    double sq = 0.0;
    for (double v : w) sq += v * v;
    rec.l2_norm = std::sqrt(sq);

    std::vector<double> loss(M), dots(M * K);
    std::vector<char> correct(M);
    parallel_for(M, [&](std::size_t i) {
      const Tape tape = net.record(w, data.input(i));
      loss[i] = loss_value(traj.loss, tape.output, data.onehot(i));
      correct[i] = argmax(tape.output) == data.label(i);
      const Jacobian jac = net.jacobian(w, tape);
      for (std::size_t k = 0; k < K; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < W; ++j) dot += jac(k, j) * direction[j];
        dots[i * K + k] = dot;
      }
    });
    rec.class_grad_dot.assign(K, 0.0);
    std::size_t hits = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      hits += correct[i] ? 1 : 0;
      loss_sum += loss[i];
      for (std::size_t k = 0; k < K; ++k) rec.class_grad_dot[k] += dots[i * K + k];
      rec.grad_dot_direction += dots[i * K + data.label(i)];
    }
    rec.accuracy = static_cast<double>(hits) / static_cast<double>(M);
    rec.mean_loss = loss_sum / static_cast<double>(M);
  }
  return records;
}

}  // namespace epk
