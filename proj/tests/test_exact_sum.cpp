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

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "epk/exact_sum.hpp"
#include "epk/rng.hpp"

using epk::ExactSum;

namespace {

// Fixed-point oracle: values are k * 2^-60 with |k| < 2^62, so any sum of a
// few thousand of them is exact in a 128-bit integer. Converting the integer
// to double rounds to nearest-even, and the power-of-two rescale is exact.
constexpr double kUlp = 0x1.0p-60;

struct FixedSample {
  std::vector<double> values;
  __int128 total = 0;
};

FixedSample fixed_sample(epk::Pcg32& rng, std::size_t n) {
  FixedSample s;
  for (std::size_t i = 0; i < n; ++i) {
    const int shift = static_cast<int>(rng.next_u32() % 62);
    auto k = static_cast<std::int64_t>(rng.next_u64() >> (2 + shift));
    if (rng.next_u32() & 1u) k = -k;
    s.values.push_back(static_cast<double>(k) * kUlp);
    // k < 2^62 but the double may have rounded it; read back the exact value
    s.total += static_cast<__int128>(std::ldexp(s.values.back(), 60));
  }
  return s;
}

double oracle(__int128 total) { return static_cast<double>(total) * kUlp; }

}  // namespace

TEST_CASE("cancellation that defeats naive summation") {
  ExactSum s;
  s.add(1e16);
  s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1.0);
  CHECK(epk::exact_sum(std::vector<double>{1e100, 1.0, -1e100, 1e-100}) == 1.0);
}

TEST_CASE("exact sums match the 128-bit fixed-point oracle") {
  epk::Pcg32 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto sample = fixed_sample(rng, 1 + rng.next_u32() % 3000);
    CHECK(epk::exact_sum(sample.values) == oracle(sample.total));
  }
}

TEST_CASE("products are accumulated exactly") {
  epk::Pcg32 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a, b;
    __int128 total = 0;  // in units of 2^-60
    for (int i = 0; i < 500; ++i) {
      const auto ka = static_cast<std::int64_t>(rng.next_u32() >> 2) - (1 << 29);
      const auto kb = static_cast<std::int64_t>(rng.next_u32() >> 2) - (1 << 29);
      a.push_back(std::ldexp(static_cast<double>(ka), -30));
      b.push_back(std::ldexp(static_cast<double>(kb), -30));
      total += static_cast<__int128>(ka) * kb;
    }
    CHECK(epk::exact_dot(a, b) == oracle(total));
  }
}

TEST_CASE("result is independent of summation order") {
  epk::Pcg32 rng(13);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.next_u32() % 200) - 100));
  const double forward = epk::exact_sum(v);
  std::mt19937_64 shuffle(5);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(v.begin(), v.end(), shuffle);
    CHECK(epk::exact_sum(v) == forward);
  }
}

TEST_CASE("merge, negated merge and scaled add") {
  epk::Pcg32 rng(14);
  const auto a = fixed_sample(rng, 700);
  const auto b = fixed_sample(rng, 900);
  ExactSum sa, sb;
  for (double x : a.values) sa.add(x);
  for (double x : b.values) sb.add(x);

  ExactSum both = sa;
  both.merge(sb);
  CHECK(both.value() == oracle(a.total + b.total));

  ExactSum diff = sa;
  diff.merge_negated(sb);
  CHECK(diff.value() == oracle(a.total - b.total));

  ExactSum scaled;
  scaled.add_scaled(sa, 3.0);
  CHECK(scaled.value() == oracle(3 * a.total));
  ExactSum neg;
  neg.add_scaled(sa, -1.0);
  CHECK(neg.value() == -sa.value());
  ExactSum zero;
  zero.add_scaled(sa, 0.0);
  CHECK(zero.is_zero());

  ExactSum self = sa;
  self.merge_negated(sa);
  CHECK(self.is_zero());
  CHECK(self.value() == 0.0);
}

TEST_CASE("expansion sums back to the exact value") {
  ExactSum s;
  s.add(1.0);
  s.add(0x1.0p-80);
  s.add(0x1.0p-200);
  const auto parts = s.expansion();
  CHECK(parts.size() >= 2);
  ExactSum again;
  for (double p : parts) again.add(p);
  again.subtract(1.0);
  again.subtract(0x1.0p-80);
  CHECK(again.value() == 0x1.0p-200);
}

TEST_CASE("rounding is to nearest, ties to even") {
  ExactSum tie;
  tie.add(1.0);
  tie.add(0x1.0p-53);  // exactly halfway between 1 and its successor
  CHECK(tie.value() == 1.0);
  ExactSum tie_up;
  tie_up.add(1.0 + 0x1.0p-52);
  tie_up.add(0x1.0p-53);
  CHECK(tie_up.value() == 1.0 + 0x1.0p-51);
  ExactSum above;
  above.add(1.0);
  above.add(0x1.0p-53);
  above.add(0x1.0p-300);
  CHECK(above.value() == 1.0 + 0x1.0p-52);
}

TEST_CASE("many additions trigger carry normalization without loss") {
  const double x = 0x1.fffffffffffffp-1;  // all 53 mantissa bits set
  const long n = (1L << 29) + 12345;
  ExactSum s;
  for (long i = 0; i < n; ++i) s.add(x);
  const __int128 total = static_cast<__int128>(n) * ((static_cast<__int128>(1) << 53) - 1);
  CHECK(s.value() == std::ldexp(static_cast<double>(total), -53));
}

TEST_CASE("non-finite inputs propagate") {
  ExactSum s;
  s.add(1.0);
  s.add(std::numeric_limits<double>::infinity());
  CHECK(std::isinf(s.value()));
  s.add(-std::numeric_limits<double>::infinity());
  CHECK(std::isnan(s.value()));
  ExactSum n;
  n.add(std::numeric_limits<double>::quiet_NaN());
  CHECK(std::isnan(n.value()));
}

TEST_CASE("subnormal values are summed exactly") {
  const double tiny = std::numeric_limits<double>::denorm_min();
  ExactSum s;
  for (int i = 0; i < 3; ++i) s.add(tiny);
  CHECK(s.value() == 3 * tiny);
}
