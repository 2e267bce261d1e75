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

namespace epk {

/// Caps the worker threads used by parallel sections (<= 0 restores the default,
/// which honours the EPK_THREADS environment variable).
void set_thread_limit(int threads);
int thread_limit();

/// Runs body(i) for i in [0, n). Iterations must be independent; callers
/// write per-index results and reduce them serially afterwards.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_limit())
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace epk
