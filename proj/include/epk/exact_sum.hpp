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

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace epk {

/// Order-independent exact accumulator for IEEE doubles.
///
/// Values are added into a fixed-point register wide enough to hold any finite
/// double (a Kulisch-style long accumulator with 32-bit digits stored in
/// 64-bit limbs and lazy carry propagation). The rounded result is the
/// correctly rounded (nearest, ties-to-even) value of the exact real sum, so
/// it does not depend on the order of additions or on how partial sums were
/// grouped and merged. This is what lets differently associated kernel sums
/// (per-step ensemble vs. aggregated kernel machine) agree bit for bit.
///
/// add_product() is exact as long as the product does not underflow into the
/// subnormal range (|a*b| >= 2^-969), which holds for every quantity the
/// library accumulates.
class ExactSum {
 public:
  void add(double x) noexcept;
  void subtract(double x) noexcept { add(-x); }
  void add_product(double a, double b) noexcept;

  /// Adds scale * other exactly (scale is applied to every expansion term).
  void add_scaled(const ExactSum& other, double scale);
  void merge(const ExactSum& other) noexcept;
  void merge_negated(const ExactSum& other) noexcept;

  /// Correctly rounded value of the accumulated sum.
  double value() const noexcept;

  /// Non-overlapping doubles, decreasing in magnitude, whose exact sum equals
  /// the accumulated value.
  std::vector<double> expansion() const;

  bool is_zero() const noexcept;
  void clear() noexcept { *this = ExactSum{}; }

 private:
  static constexpr int kChunkBits = 32;
  static constexpr int kChunks = 68;
  static constexpr std::uint32_t kCarryInterval = 1u << 29;

  void normalize() noexcept;
  void count_add(std::uint32_t n) noexcept;

  std::array<std::int64_t, kChunks> chunk_{};
  std::uint32_t pending_ = 0;
  double special_ = 0.0;  // sum of any non-finite inputs
};

/// Correctly rounded sum of a sequence.
double exact_sum(std::span<const double> values) noexcept;

/// Correctly rounded dot product.
double exact_dot(std::span<const double> a, std::span<const double> b) noexcept;

}  // namespace epk
