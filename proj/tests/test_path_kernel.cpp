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

#include <doctest.h>

#include <cmath>

#include "epk/errors.hpp"
#include "epk/parallel.hpp"
#include "epk/path_kernel.hpp"
#include "test_util.hpp"

using namespace epk;
using epk::testing::mlp;

namespace {

struct Fixture {
  LabeledDataset data = testing::small_blobs(10, 5, 21);
  LabeledDataset test = testing::small_blobs(2, 5, 22);
  ModelSpec spec = mlp({5, 8, 3});
  Trajectory traj;

  explicit Fixture(Loss loss = Loss::NLL, std::size_t steps = 20, double eps = 0.1) {
    TrainOptions options;
    options.loss = loss;
    options.seed = 4;
    traj = train_full_batch(spec, data, eps, steps, options);
  }
};

/// Identity-head model without hidden layers: f(w, x) = A x + b, so the
/// Jacobian is the constant [I (x) x^T, I] and J J'^T = (x.x' + 1) I.
struct LinearFixture {
  LabeledDataset data = testing::small_blobs(6, 4, 31);
  ModelSpec spec = mlp({4, 3}, Head::Identity);
  Trajectory traj;

  LinearFixture() {
    TrainOptions options;
    options.loss = Loss::SquaredError;
    traj = train_full_batch(spec, data, 0.05, 15, options);
  }
};

double linear_kernel(std::span<const double> x, std::span<const double> y) {
  double dot = 1.0;
  for (std::size_t d = 0; d < x.size(); ++d) dot += x[d] * y[d];
  return dot;
}

}  // namespace

TEST_CASE("interpolate_weights endpoints and midpoint") {
  const std::vector<double> a{0.1, -3.0, 7.25}, b{0.3, 1.0, -2.0};
  CHECK(interpolate_weights(a, b, 0.0) == a);
  CHECK(interpolate_weights(a, b, 1.0) == b);
  CHECK(interpolate_weights(std::vector<double>{0, 0}, std::vector<double>{2, 2}, 0.5) == std::vector<double>{1, 1});
  CHECK_THROWS_AS(interpolate_weights(a, b, -0.1), InputError);
  CHECK_THROWS_AS(interpolate_weights(a, b, 1.5), InputError);
  CHECK_THROWS_AS(interpolate_weights(a, b, std::nan("")), InputError);
  CHECK_THROWS_AS(interpolate_weights(a, std::vector<double>{1}, 0.5), InputError);
}

TEST_CASE("quadrature nodes") {
  CHECK(quadrature_node(Quadrature::LeftRiemann, 0, 4) == 0.0);
  CHECK(quadrature_node(Quadrature::LeftRiemann, 3, 4) == 0.75);
  CHECK(quadrature_node(Quadrature::Midpoint, 0, 4) == 0.125);
  CHECK(quadrature_from_string("midpoint") == Quadrature::Midpoint);
  CHECK_THROWS_AS(quadrature_from_string("simpson"), ConfigError);
  CHECK(test_feature_from_string("ntkN") == TestFeature::Final);
}

TEST_CASE("one-node EPK block is the DPK block and the NTK at w_s") {
  Fixture f;
  const Network net(f.spec);
  const auto x = f.test.input(0);
  for (std::size_t s : {0u, 7u, 19u}) {
    const KernelBlock epk1 = epk_step_block(f.traj, f.data, s, x, 3, {1, Quadrature::LeftRiemann});
    const KernelBlock dpk = jacobian_block(per_sample_jacobian(net, f.traj.checkpoint(s), x),
                                           per_sample_jacobian(net, f.traj.checkpoint(s), f.data.input(3)));
    CHECK(epk1.values == dpk.values);
    CHECK(ntk_block(net, f.traj.checkpoint(s), x, f.data.input(3)).values == dpk.values);
    CHECK(epk1.step == s);
  }
  CHECK_THROWS_AS(epk_step_block(f.traj, f.data, 20, x, 0, {}), InputError);
  CHECK_THROWS_AS(epk_step_block(f.traj, f.data, 0, x, 30, {}), InputError);
}

TEST_CASE("zero-length steps make the block independent of T") {
  Fixture base;
  TrainOptions options;
  options.allow_zero_steps = true;
  const Trajectory still = train_full_batch(base.spec, base.data, 0.0, 3, options);
  const auto x = base.test.input(1);
  const auto b1 = epk_step_block(still, base.data, 1, x, 2, {1, Quadrature::LeftRiemann});
  const auto b7 = epk_step_block(still, base.data, 1, x, 2, {7, Quadrature::LeftRiemann});
  CHECK(b1.values == b7.values);
  for (std::size_t T : {1u, 5u}) {
    const auto epk = epk_predict(still, base.data, x, {T, Quadrature::LeftRiemann});
    CHECK(epk.kernel_logits == dpk_predict(still, base.data, x).kernel_logits);
  }
  const PointSet pts{std::vector<double>(x.begin(), x.end()), x.size()};
  const auto records = alignment_error(still, base.data, pts, {4, Quadrature::LeftRiemann});
  for (const auto& rec : records.front())
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(rec.epk_dpk_gap[k] == 0.0);
      CHECK(rec.epk_ntk0_gap[k] == 0.0);
      CHECK(rec.epk_ntkN_gap[k] == 0.0);
    }
}

TEST_CASE("linear model: block equals the closed form for every T") {
  LinearFixture f;
  const std::vector<double> x{0.3, -1.2, 2.0, 0.7};
  for (std::size_t T : {2u, 10000u}) {
    const auto block = epk_step_block(f.traj, f.data, 4, x, 5, {T, Quadrature::LeftRiemann});
    const double k = linear_kernel(x, f.data.input(5));
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(block(a, c) - (a == c ? k : 0.0)) <= 1e-12 * std::abs(k));
  }
}

TEST_CASE("linear model: kernel reproduces the model and alignment gaps vanish") {
  LinearFixture f;
  const auto test = testing::small_blobs(2, 4, 77);
  const PointSet pts = points_of(test);
  for (const auto& r : kernel_predict(f.traj, f.data, pts, TestFeature::Path, {3, Quadrature::LeftRiemann}))
    CHECK(r.max_abs_err <= 1e-12);
  const auto records = alignment_error(f.traj, f.data, pts, {5, Quadrature::LeftRiemann});
  for (const auto& per_point : records)
    for (const auto& rec : per_point)
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(rec.epk_dpk_gap[k] - 0.0) <= 1e-10);
        CHECK(std::abs(rec.cum_epk_ntk0_gap[k]) <= 1e-10);
      }
}

TEST_CASE("empty path predicts the constant initial output") {
  Fixture f;
  const Trajectory empty = initial_trajectory(f.spec, f.data, init_model(f.spec, 4), 4);
  const auto r = epk_predict(empty, f.data, f.test.input(0), {});
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(r.kernel_logits[k] == -std::log(3.0));
    CHECK(r.bias[k] == -std::log(3.0));
  }
  CHECK(r.max_abs_err == 0.0);
  CHECK(r.per_step_contrib.empty());
}

TEST_CASE("step reconstruction is within 1e-12") {
  Fixture f;
  for (double e : step_reconstruction_errors(f.traj, f.data)) CHECK(e <= 1e-12);
  Fixture se(Loss::SquaredError, 10, 0.02);
  for (double e : step_reconstruction_errors(se.traj, se.data)) CHECK(e <= 1e-12);
}

TEST_CASE("prediction report invariants") {
  Fixture f;
  const PointSet pts = points_of(f.test);
  const auto reports = kernel_predict(f.traj, f.data, pts, TestFeature::Path, {20, Quadrature::LeftRiemann});
  REQUIRE(reports.size() == 6);
  const Network net(f.spec);
  for (std::size_t p = 0; p < reports.size(); ++p) {
    const auto& r = reports[p];
    CHECK(r.model_logits == forward(net, f.traj.final(), pts.point(p)));
    double err = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      err = std::max(err, std::abs(r.model_logits[k] - r.kernel_logits[k]));
      std::vector<double> terms{r.bias[k]};
      for (std::size_t s = 0; s < 20; ++s) terms.push_back(r.step(s)[k]);
      // each per-step entry is rounded once, so re-summation agrees to rounding
      CHECK(std::abs(exact_sum(terms) - r.kernel_logits[k]) <= 1e-14);
    }
    CHECK(r.max_abs_err == err);
    CHECK(r.max_abs_err < 0.05);
  }
}

TEST_CASE("DPK equals the one-node EPK bit for bit") {
  Fixture f;
  for (std::size_t p = 0; p < f.test.size(); ++p) {
    const auto dpk = dpk_predict(f.traj, f.data, f.test.input(p));
    const auto epk1 = epk_predict(f.traj, f.data, f.test.input(p), {1, Quadrature::LeftRiemann});
    CHECK(dpk.kernel_logits == epk1.kernel_logits);
    CHECK(dpk.per_step_contrib == epk1.per_step_contrib);
  }
}

TEST_CASE("refining the quadrature shrinks the error") {
  Fixture f;
  const PointSet pts = points_of(f.test);
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t T : {1u, 4u, 16u, 64u}) {
    double worst = 0.0;
    for (const auto& r : kernel_predict(f.traj, f.data, pts, TestFeature::Path, {T, Quadrature::LeftRiemann}))
      worst = std::max(worst, r.max_abs_err);
    MESSAGE("T=" << T << " max_abs_err=" << worst);
    CHECK(worst < previous);
    previous = worst;
  }
  double mid = 0.0;
  for (const auto& r : kernel_predict(f.traj, f.data, pts, TestFeature::Path, {16, Quadrature::Midpoint}))
    mid = std::max(mid, r.max_abs_err);
  CHECK(mid < 1e-3);
}

TEST_CASE("sample coefficients: constant under NLL, varying under squared error") {
  Fixture f;
  const auto c = sample_coefficients(f.traj, f.data);
  CHECK(c.constant_flag);
  CHECK(c.max_variation == 0.0);
  const double scale = 0.1 / 30.0;
  CHECK(c.step_scale[3] == scale);
  const auto a = c.a(3, 12);
  for (std::size_t k = 0; k < 3; ++k) CHECK(a[k] == scale * f.data.onehot(12)[k]);

  Fixture se(Loss::SquaredError, 5, 0.02);
  const auto cs = sample_coefficients(se.traj, se.data);
  CHECK_FALSE(cs.constant_flag);
  CHECK(cs.max_variation > 0.0);
  CHECK(cs.worst_step > 0);
}

TEST_CASE("reduced kernel machine equals the ensemble bit for bit") {
  Fixture f;
  const PointSet pts = points_of(f.test);
  const PathKernelOptions opts{8, Quadrature::LeftRiemann};
  const auto machines = reduce_to_kernel_machine(f.traj, f.data, pts, opts);
  const auto reports = kernel_predict(f.traj, f.data, pts, TestFeature::Path, opts);
  for (std::size_t p = 0; p < pts.size(); ++p) {
    CHECK(machines[p].kernel_logits == machines[p].ensemble_logits);
    CHECK(machines[p].kernel_logits == reports[p].kernel_logits);
    CHECK(machines[p].bias == reports[p].bias);
    for (std::size_t i = 0; i < f.data.size(); ++i)
      for (std::size_t k = 0; k < 3; ++k) CHECK(machines[p].coefficients[i * 3 + k] == f.data.onehot(i)[k]);
  }
}

TEST_CASE("single-step aggregated kernel is the scaled step block") {
  Fixture f(Loss::NLL, 1, 0.5);
  const PointSet pts = points_of(f.test);
  const PathKernelOptions opts{6, Quadrature::LeftRiemann};
  const auto machines = reduce_to_kernel_machine(f.traj, f.data, pts, opts);
  for (std::size_t i : {0u, 11u, 29u}) {
    const auto block = epk_step_block(f.traj, f.data, 0, pts.point(2), i, opts);
    const auto agg = machines[2].block(i);
    for (std::size_t e = 0; e < 9; ++e)
      CHECK(agg.values[e] == doctest::Approx(0.5 / 30.0 * block.values[e]).epsilon(1e-14));
  }
}

TEST_CASE("squared-error training is refused by the reduction") {
  Fixture se(Loss::SquaredError, 5, 0.02);
  CHECK_THROWS_AS(reduce_to_kernel_machine(se.traj, se.data, points_of(se.test), {4, Quadrature::LeftRiemann}),
                  ReductionRefused);
  // the ensemble form still applies
  for (const auto& r : kernel_predict(se.traj, se.data, points_of(se.test), TestFeature::Path, {64, Quadrature::LeftRiemann}))
    CHECK(r.max_abs_err < 1e-3);
}

TEST_CASE("alignment gaps telescope to the prediction differences") {
  Fixture f;
  const PointSet pts = points_of(f.test);
  const PathKernelOptions opts{10, Quadrature::LeftRiemann};
  const auto records = alignment_error(f.traj, f.data, pts, opts);
  const auto epk = kernel_predict(f.traj, f.data, pts, TestFeature::Path, opts);
  const auto dpk = kernel_predict(f.traj, f.data, pts, TestFeature::StepStart, opts);
  const auto ntk0 = kernel_predict(f.traj, f.data, pts, TestFeature::Initial, opts);
  const auto ntkN = kernel_predict(f.traj, f.data, pts, TestFeature::Final, opts);
  bool nonzero = false;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    const auto& last = records[p].back();
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(last.cum_epk_dpk_gap[k] == doctest::Approx(epk[p].kernel_logits[k] - dpk[p].kernel_logits[k]).epsilon(1e-9));
      CHECK(last.cum_epk_ntk0_gap[k] == doctest::Approx(epk[p].kernel_logits[k] - ntk0[p].kernel_logits[k]).epsilon(1e-9));
      CHECK(last.cum_epk_ntkN_gap[k] == doctest::Approx(epk[p].kernel_logits[k] - ntkN[p].kernel_logits[k]).epsilon(1e-9));
      for (const auto& rec : records[p]) nonzero = nonzero || rec.epk_dpk_gap[k] != 0.0;
    }
  }
  CHECK(nonzero);
}

TEST_CASE("contributions partition the kernel prediction") {
  Fixture f;
  const auto x = f.test.input(4);
  const PathKernelOptions opts{10, Quadrature::LeftRiemann};
  const auto report = kernel_contributions(f.traj, f.data, x, opts);
  const auto epk = epk_predict(f.traj, f.data, x, opts);
  CHECK(report.bias == epk.bias);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> column;
    for (std::size_t i = 0; i < report.samples; ++i) column.push_back(report.row(i)[k]);
    CHECK(exact_sum(column) == doctest::Approx(report.kernel_logits[k] - report.bias[k]).epsilon(1e-13));
    CHECK(report.kernel_logits[k] == doctest::Approx(epk.kernel_logits[k]).epsilon(1e-12));
  }

  const LabeledDataset one = f.data.subset(std::vector<std::size_t>{5});
  const Trajectory single = train_full_batch(f.spec, one, 0.5, 4, TrainOptions{});
  const auto r1 = kernel_contributions(single, one, x, opts);
  const auto e1 = epk_predict(single, one, x, opts);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(r1.row(0)[k] == doctest::Approx(e1.kernel_logits[k] - e1.bias[k]).epsilon(1e-12));
}

TEST_CASE("NTK block: symmetric PSD on the diagonal, matches a direct dot product") {
  Fixture f;
  const Network net(f.spec);
  const auto w = f.traj.final();
  const auto x = f.test.input(0), y = f.test.input(3);
  const KernelBlock self = ntk_block(net, w, x, x);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 3; ++c) CHECK(self(a, c) == self(c, a));
  CHECK(self(0, 0) >= 0.0);
  CHECK(self(0, 0) * self(1, 1) >= self(0, 1) * self(0, 1) * (1 - 1e-12));

  const KernelBlock cross = ntk_block(net, w, x, y);
  const Jacobian jx = per_sample_jacobian(net, w, x), jy = per_sample_jacobian(net, w, y);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < jx.cols; ++j) dot += jx(a, j) * jy(c, j);
      CHECK(cross(a, c) == doctest::Approx(dot).epsilon(1e-12));
    }
}

TEST_CASE("path diagnostic endpoints") {
  Fixture f;
  const auto records = weight_path_diagnostic(f.traj, f.data, 5);
  REQUIRE(records.size() == 5);
  const Network net(f.spec);
  CHECK(records.front().t == 0.0);
  CHECK(records.back().t == 1.0);
  CHECK(records.back().accuracy == accuracy(net, f.traj.final(), f.data));
  CHECK(records.front().accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(records.front().mean_loss == doctest::Approx(std::log(3.0)));
  double norm = 0.0;
  for (double v : f.traj.initial()) norm += v * v;
  CHECK(records.front().l2_norm == doctest::Approx(std::sqrt(norm)));
  for (const auto& r : records) {
    CHECK(r.class_grad_dot.size() == 3);
    CHECK(std::isfinite(r.grad_dot_direction));
  }
  CHECK_THROWS_AS(weight_path_diagnostic(f.traj, f.data, 1), InputError);
}

TEST_CASE("kernel prediction refuses a foreign dataset or bad query shape") {
  Fixture f;
  CHECK_THROWS_AS(epk_predict(f.traj, f.test, f.test.input(0), {}), ConfigError);
  CHECK_THROWS_AS(epk_predict(f.traj, f.data, std::vector<double>{1, 2}, {}), ConfigError);
  CHECK_THROWS_AS(epk_predict(f.traj, f.data, f.test.input(0), {0, Quadrature::LeftRiemann}), ConfigError);
}

TEST_CASE("results do not depend on the thread count") {
  Fixture f;
  const PointSet pts = points_of(f.test);
  set_thread_limit(1);
  const auto one = kernel_predict(f.traj, f.data, pts, TestFeature::Path, {5, Quadrature::LeftRiemann});
  set_thread_limit(4);
  const auto four = kernel_predict(f.traj, f.data, pts, TestFeature::Path, {5, Quadrature::LeftRiemann});
  set_thread_limit(0);
  for (std::size_t p = 0; p < pts.size(); ++p) {
    CHECK(one[p].kernel_logits == four[p].kernel_logits);
    CHECK(one[p].per_step_contrib == four[p].per_step_contrib);
  }
}
