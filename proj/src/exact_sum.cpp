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

#include "epk/exact_sum.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace epk {

namespace {

constexpr int kMinExponent = -1074;  // weight of bit 0 of the register

}  // namespace

void ExactSum::count_add(std::uint32_t n) noexcept {
  pending_ += n;
  if (pending_ >= kCarryInterval) normalize();
}

void ExactSum::add(double x) noexcept {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  const auto biased = static_cast<int>((bits >> 52) & 0x7ff);
  std::uint64_t mantissa = bits & ((std::uint64_t{1} << 52) - 1);
  if (biased == 0x7ff) {
    special_ += x;
    return;
  }
  int position = 0;
  if (biased == 0) {
    if (mantissa == 0) return;
  } else {
    mantissa |= std::uint64_t{1} << 52;
    position = biased - 1;
  }
  const int index = position >> 5;
  const int shift = position & 31;
  const unsigned __int128 shifted = static_cast<unsigned __int128>(mantissa) << shift;
  const auto lo = static_cast<std::int64_t>(static_cast<std::uint64_t>(shifted) & 0xffffffffULL);
  const auto mid = static_cast<std::int64_t>(static_cast<std::uint64_t>(shifted >> 32) & 0xffffffffULL);
  const auto hi = static_cast<std::int64_t>(static_cast<std::uint64_t>(shifted >> 64));
  if (bits >> 63) {
    chunk_[index] -= lo;
    chunk_[index + 1] -= mid;
    chunk_[index + 2] -= hi;
  } else {
    chunk_[index] += lo;
    chunk_[index + 1] += mid;
    chunk_[index + 2] += hi;
  }
  count_add(1);
}

void ExactSum::add_product(double a, double b) noexcept {
  const double p = a * b;
  if (!std::isfinite(p)) {
    special_ += p;
    return;
  }
  add(p);
  add(std::fma(a, b, -p));
}

void ExactSum::add_scaled(const ExactSum& other, double scale) {
  if (scale == 1.0) {
    merge(other);
    return;
  }
  if (scale == -1.0) {
    merge_negated(other);
    return;
  }
  if (scale == 0.0) return;
  for (double part : other.expansion()) add_product(part, scale);
  if (other.special_ != 0.0 || std::isnan(other.special_)) special_ += other.special_ * scale;
}

void ExactSum::normalize() noexcept {
  for (int j = 0; j + 1 < kChunks; ++j) {
    const std::int64_t carry = chunk_[j] >> kChunkBits;  // floor division
    chunk_[j] -= carry * (std::int64_t{1} << kChunkBits);
    chunk_[j + 1] += carry;
  }
  pending_ = 0;
}

void ExactSum::merge(const ExactSum& other) noexcept {
  normalize();
  ExactSum tmp = other;
  tmp.normalize();
  for (int j = 0; j < kChunks; ++j) chunk_[j] += tmp.chunk_[j];
  special_ += other.special_;
  count_add(2);
}

void ExactSum::merge_negated(const ExactSum& other) noexcept {
  normalize();
  ExactSum tmp = other;
  tmp.normalize();
  for (int j = 0; j < kChunks; ++j) chunk_[j] -= tmp.chunk_[j];
  special_ -= other.special_;
  count_add(2);
}

bool ExactSum::is_zero() const noexcept {
  if (special_ != 0.0 || std::isnan(special_)) return false;
  ExactSum tmp = *this;
  tmp.normalize();
  for (auto c : tmp.chunk_)
    if (c != 0) return false;
  return true;
}

double ExactSum::value() const noexcept {
  if (special_ != 0.0 || std::isnan(special_)) return special_;
  ExactSum tmp = *this;
  tmp.normalize();
  auto& d = tmp.chunk_;
  const bool negative = d[kChunks - 1] < 0;
  if (negative) {
    for (auto& c : d) c = -c;
    tmp.normalize();
  }
  int top = kChunks - 1;
  while (top >= 0 && d[top] == 0) --top;
  if (top < 0) return 0.0;

  const auto digit = [&](int j) -> std::uint64_t {
    return (j >= 0 && j < kChunks) ? static_cast<std::uint64_t>(d[j]) : 0;
  };
  const auto bit = [&](int pos) -> std::uint64_t { return (digit(pos >> 5) >> (pos & 31)) & 1u; };
  // Top chunk may exceed 32 bits only when the sum overflows the double range.
  const int top_bit = top * kChunkBits + (63 - std::countl_zero(digit(top)));

  double magnitude = 0.0;
  if (top_bit <= 52) {
    // Below 2^-1021: exactly representable, no rounding needed.
    const std::uint64_t m = digit(0) | (digit(1) << 32);
    magnitude = std::ldexp(static_cast<double>(m), kMinExponent);
  } else {
    const int low = top_bit - 52;
    std::uint64_t m = 0;
    for (int pos = top_bit; pos >= low; --pos) m = (m << 1) | bit(pos);
    const int round_pos = low - 1;
    const bool round_bit = bit(round_pos) != 0;
    bool sticky = false;
    if (round_bit) {
      const int full = round_pos >> 5;
      for (int j = 0; j < full && !sticky; ++j) sticky = d[j] != 0;
      if (!sticky) {
        const std::uint64_t mask = (std::uint64_t{1} << (round_pos & 31)) - 1;
        sticky = (digit(full) & mask) != 0;
      }
    }
    int exponent = low + kMinExponent;
    if (round_bit && (sticky || (m & 1u))) {
      ++m;
      if (m == (std::uint64_t{1} << 53)) {
        m >>= 1;
        ++exponent;
      }
    }
    if (exponent + 52 > 1023) {
      magnitude = std::numeric_limits<double>::infinity();
    } else {
      magnitude = std::ldexp(static_cast<double>(m), exponent);
    }
  }
  return negative ? -magnitude : magnitude;
}

std::vector<double> ExactSum::expansion() const {
  std::vector<double> parts;
  ExactSum rest = *this;
  rest.special_ = 0.0;
  for (;;) {
    const double v = rest.value();
    if (v == 0.0 || !std::isfinite(v)) break;
    parts.push_back(v);
    rest.subtract(v);
  }
  return parts;
}

double exact_sum(std::span<const double> values) noexcept {
  ExactSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

double exact_dot(std::span<const double> a, std::span<const double> b) noexcept {
  ExactSum acc;
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  for (std::size_t i = 0; i < n; ++i) acc.add_product(a[i], b[i]);
  return acc.value();
}

}  // namespace epk
