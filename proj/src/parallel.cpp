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

#include "epk/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace epk {

namespace {

int g_thread_limit = 0;

int default_threads() {
  if (const char* env = std::getenv("EPK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  return omp_get_max_threads();
}

}  // namespace

void set_thread_limit(int threads) { g_thread_limit = threads > 0 ? threads : 0; }

int thread_limit() { return g_thread_limit > 0 ? g_thread_limit : default_threads(); }

}  // namespace epk
