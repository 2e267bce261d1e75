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
#include "epk/gp.hpp"
#include "test_util.hpp"

using namespace epk;
using epk::testing::mlp;

namespace {

struct Fixture {
  LabeledDataset data = testing::small_blobs(8, 4, 41);
  LabeledDataset test = testing::small_blobs(3, 4, 42);
  ModelSpec spec = mlp({4, 6, 3});
  Trajectory traj;

  Fixture() {
    TrainOptions options;
    options.seed = 2;
    traj = train_full_batch(spec, data, 0.4, 12, options);
  }
};

GramMatrix identity_gram(std::size_t n, std::size_t K) {
  return {n, n, K, Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n * K), static_cast<Eigen::Index>(n * K))};
}

}  // namespace

TEST_CASE("gram over a singleton is the kernel block") {
  const PointSet a{{1.0, 2.0}, 2};
  const BlockKernel k = [](std::span<const double> x, std::span<const double> y) {
    KernelBlock b(2);
    b(0, 0) = x[0] * y[0];
    b(0, 1) = 1.0;
    b(1, 0) = 2.0;
    b(1, 1) = x[1] * y[1];
    return b;
  };
  const GramMatrix g = gram(k, a, a, 2);
  CHECK(g.rows == 1);
  CHECK(g.block(0, 0).values == std::vector<double>{1.0, 1.0, 2.0, 4.0});
  const BlockKernel broken = [](std::span<const double>, std::span<const double>) {
    KernelBlock b(1);
    b(0, 0) = std::nan("");
    return b;
  };
  const PointSet two{{1.0, 2.0, 3.0, 4.0}, 2};
  CHECK_THROWS_WITH_AS(gram(broken, two, two, 1), doctest::Contains("(0, 0)"), NumericalError);
}

TEST_CASE("NTK Gram is the Gram of stacked Jacobians") {
  Fixture f;
  const Network net(f.spec);
  const PointSet pts = points_of(f.test);
  const GramMatrix g = path_gram(f.traj, f.data, pts, pts, {GramKernel::NtkN, {}});
  const GramMatrix direct = gram(
      [&](std::span<const double> x, std::span<const double> y) { return ntk_block(net, f.traj.final(), x, y); },
      pts, pts, 3);
  CHECK((g.flat - direct.flat).cwiseAbs().maxCoeff() <= 1e-12 * direct.flat.cwiseAbs().maxCoeff());
  CHECK(check_psd(g).pass);
}

TEST_CASE("EPK Gram matches an explicit per-node sum and is symmetric PSD") {
  Fixture f;
  const Network net(f.spec);
  const PointSet pts = points_of(f.test);
  const std::size_t T = 3;
  const GramMatrix g = path_gram(f.traj, f.data, pts, pts, {GramKernel::Epk, {T, Quadrature::LeftRiemann}});

  Eigen::MatrixXd oracle = Eigen::MatrixXd::Zero(g.flat.rows(), g.flat.cols());
  for (std::size_t s = 0; s < f.traj.num_steps(); ++s)
    for (std::size_t tau = 0; tau < T; ++tau) {
      const auto w = interpolate_weights(f.traj.checkpoint(s), f.traj.checkpoint(s + 1),
                                         static_cast<double>(tau) / static_cast<double>(T));
      for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < pts.size(); ++j) {
          const auto b = ntk_block(net, w, pts.point(i), pts.point(j));
          for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t c = 0; c < 3; ++c)
              oracle(static_cast<Eigen::Index>(i * 3 + k), static_cast<Eigen::Index>(j * 3 + c)) +=
                  0.4 / (24.0 * T) * b(k, c);
        }
    }
  CHECK((g.flat - oracle).cwiseAbs().maxCoeff() <= 1e-12 * oracle.cwiseAbs().maxCoeff());

  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const auto bij = g.block(i, j), bji = g.block(j, i);
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(bij(k, c) - bji(c, k)) <= 1e-10);
    }
  const PsdReport psd = check_psd(g);
  CHECK(psd.pass);
  CHECK(psd.symmetric_defect <= 1e-8);
  CHECK(psd.min_eig >= -1e-8 * psd.max_eig);

  const auto diag = path_gram_diagonal(f.traj, f.data, pts, {GramKernel::Epk, {T, Quadrature::LeftRiemann}});
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t e = 0; e < 9; ++e)
      CHECK(diag[i * 9 + e] == doctest::Approx(g.block(i, i).values[e]).epsilon(1e-12).scale(1e-300));
}

TEST_CASE("PSD check on small matrices") {
  const PsdReport id = check_psd(Eigen::MatrixXd::Identity(4, 4));
  CHECK(id.pass);
  CHECK(id.min_eig == doctest::Approx(1.0));
  CHECK(id.max_eig == doctest::Approx(1.0));
  CHECK(id.symmetric_defect == 0.0);
  Eigen::MatrixXd m(2, 2);
  m << 1, 0, 0, -1;
  const PsdReport neg = check_psd(m);
  CHECK_FALSE(neg.pass);
  CHECK(neg.min_eig == doctest::Approx(-1.0));
  Eigen::MatrixXd skew(2, 2);
  skew << 1, 0.5, 0, 1;
  CHECK_FALSE(check_psd(skew).pass);
  CHECK_THROWS_AS(check_psd(Eigen::MatrixXd::Zero(2, 3)), ConfigError);
}

TEST_CASE("Kriging with an uncorrelated query returns the prior") {
  const std::size_t n = 4, G = 3, K = 2;
  const GramMatrix tt = identity_gram(n, K);
  const GramMatrix qt{G, n, K, Eigen::MatrixXd::Zero(G * K, n * K)};
  std::vector<double> qq(G * K * K, 0.0);
  for (std::size_t q = 0; q < G; ++q)
    for (std::size_t k = 0; k < K; ++k) qq[(q * K + k) * K + k] = 1.0 + static_cast<double>(q + k);
  const std::vector<double> targets(n * K, 1.0);
  const PosteriorField field = kriging(tt, qt, qq, targets, {});
  for (std::size_t q = 0; q < G; ++q) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      CHECK(field.mean[q * K + k] == 0.0);
      CHECK(field.variance[q * K + k] == 1.0 + static_cast<double>(q + k));
      total += field.variance[q * K + k];
    }
    CHECK(field.total_variance[q] == total);
  }
  CHECK_THROWS_AS(kriging(tt, qt, qq, std::vector<double>(3), {}), ConfigError);
}

TEST_CASE("Kriging interpolates at training points") {
  Fixture f;
  std::vector<std::size_t> picks{0, 5, 9, 13, 17, 22};
  const LabeledDataset cond = f.data.subset(picks);
  const PointSet pts = points_of(cond);
  const GramOptions opts{GramKernel::Epk, {4, Quadrature::LeftRiemann}};
  const GramMatrix tt = path_gram(f.traj, f.data, pts, pts, opts);
  const auto diag = path_gram_diagonal(f.traj, f.data, pts, opts);
  KrigingOptions kopts;
  kopts.jitter = 1e-10;
  const std::vector<double> targets(cond.onehots().begin(), cond.onehots().end());
  const std::vector<double> prior(3, -std::log(3.0));
  const PosteriorField field = kriging(tt, tt, diag, targets, prior, kopts);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(field.variance[i * 3 + k] < 1e-6);
      CHECK(field.mean[i * 3 + k] == doctest::Approx(targets[i * 3 + k]).epsilon(1e-4).scale(1.0));
    }
  CHECK(field.jitter[0] == 1e-10);
}

TEST_CASE("Kriging commutes with permutations of the query points") {
  Fixture f;
  const LabeledDataset cond = f.data.subset(std::vector<std::size_t>{1, 8, 16});
  const PointSet train = points_of(cond);
  const PointSet query = points_of(f.test);
  std::vector<std::size_t> order{4, 0, 8, 2, 6, 1, 3, 7, 5};
  const PointSet shuffled = points_of(f.test.subset(order));
  const GramOptions opts{GramKernel::Epk, {2, Quadrature::LeftRiemann}};
  const GramMatrix tt = path_gram(f.traj, f.data, train, train, opts);
  const std::vector<double> targets(cond.onehots().begin(), cond.onehots().end());
  const auto a = kriging(tt, path_gram(f.traj, f.data, query, train, opts),
                         path_gram_diagonal(f.traj, f.data, query, opts), targets, {});
  const auto b = kriging(tt, path_gram(f.traj, f.data, shuffled, train, opts),
                         path_gram_diagonal(f.traj, f.data, shuffled, opts), targets, {});
  for (std::size_t q = 0; q < order.size(); ++q)
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(b.mean[q * 3 + k] == doctest::Approx(a.mean[order[q] * 3 + k]).epsilon(1e-12));
      CHECK(b.variance[q * 3 + k] == doctest::Approx(a.variance[order[q] * 3 + k]).epsilon(1e-9).scale(1e-12));
    }
}

TEST_CASE("jitter escalates on a singular system and is reported") {
  const std::size_t K = 1;
  GramMatrix tt{2, 2, K, Eigen::MatrixXd::Ones(2, 2)};
  tt.flat(1, 1) = 1.0 - 1e-3;  // indefinite by a margin the jitter must cover
  const GramMatrix qt{1, 2, K, Eigen::MatrixXd::Ones(1, 2)};
  const std::vector<double> qq{10.0};
  const auto field = kriging(tt, qt, qq, std::vector<double>{0.0, 0.0}, {});
  CHECK(field.jitter[0] > 1e-8);
  CHECK(field.jitter[0] <= 1e-2);
  GramMatrix hopeless{2, 2, K, Eigen::MatrixXd::Identity(2, 2)};
  hopeless.flat(1, 1) = -1.0;
  CHECK_THROWS_AS(kriging(hopeless, qt, qq, std::vector<double>{0.0, 0.0}, {}), NumericalError);
}

TEST_CASE("Monte-Carlo softmax std") {
  PosteriorField field;
  field.points = 2;
  field.classes = 2;
  field.mean = {0.0, 0.0, 1.0, -1.0};
  field.variance = {0.0, 0.0, 0.0, 0.0};
  mc_prob_std(field, 50, 1);
  for (double s : field.mc_prob_std) CHECK(s == 0.0);
  CHECK_THROWS_AS(mc_prob_std(field, 1, 1), InputError);

  // Oracle: p1 = 1 / (1 + exp(z2 - z1)) with z1, z2 ~ N(0, 1), integrated on a
  // fine tensor grid (trapezoid over [-9, 9]^2).
  const int n = 1201;
  const double lo = -9.0, h = 18.0 / (n - 1);
  double m1 = 0.0, m2 = 0.0, mass = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double z1 = lo + i * h, z2 = lo + j * h;
      double wgt = std::exp(-0.5 * (z1 * z1 + z2 * z2));
      if (i == 0 || i == n - 1) wgt *= 0.5;
      if (j == 0 || j == n - 1) wgt *= 0.5;
      const double p = 1.0 / (1.0 + std::exp(z2 - z1));
      m1 += wgt * p;
      m2 += wgt * p * p;
      mass += wgt;
    }
  const double oracle = std::sqrt(m2 / mass - (m1 / mass) * (m1 / mass));

  PosteriorField g;
  g.points = 1;
  g.classes = 2;
  g.mean = {0.0, 0.0};
  g.variance = {1.0, 1.0};
  mc_prob_std(g, 100000, 7);
  CHECK(std::abs(g.mc_prob_std[0] - oracle) < 0.01);
  CHECK(g.mc_prob_std[0] == doctest::Approx(g.mc_prob_std[1]).epsilon(1e-12));

  PosteriorField again = g;
  mc_prob_std(again, 100000, 7);
  CHECK(again.mc_prob_std == g.mc_prob_std);
  PosteriorField doubled = g;
  mc_prob_std(doubled, 200000, 7);
  CHECK(std::abs(doubled.mc_prob_std[0] - g.mc_prob_std[0]) < 2.0 / std::sqrt(100000.0) * g.mc_prob_std[0]);
}

TEST_CASE("grid specification") {
  const PointSet grid = parse_grid("0:1:3,10:20:2", 4);
  REQUIRE(grid.size() == 6);
  CHECK(grid.point(0)[0] == 0.0);
  CHECK(grid.point(1)[0] == 0.5);
  CHECK(grid.point(2)[0] == 1.0);
  CHECK(grid.point(3)[1] == 20.0);
  CHECK(grid.point(5)[3] == 0.0);
  CHECK(parse_grid("2:2:1,3:3:1", 2).values == std::vector<double>{2.0, 3.0});
  CHECK_THROWS_AS(parse_grid("0:1:3", 4), ConfigError);
  CHECK_THROWS_AS(parse_grid("0:1:x,0:1:2", 4), ConfigError);
  CHECK_THROWS_AS(parse_grid("0:1:0,0:1:2", 4), ConfigError);
  CHECK_THROWS_AS(parse_grid("0:1:2,0:1:2", 1), ConfigError);
}
